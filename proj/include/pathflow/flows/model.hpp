// Copyright 2026 The pathflow Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#ifndef PATHFLOW_FLOWS_MODEL_HPP
#define PATHFLOW_FLOWS_MODEL_HPP

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <pathflow/error.hpp>
#include <pathflow/numerics/dense.hpp>
#include <pathflow/numerics/mlp.hpp>
#include <pathflow/random.hpp>
#include <pathflow/targets/base_density.hpp>

/**
 * \file
 * \brief Flow architecture descriptors, coupling layers and the parameter layout.
 */

namespace pathflow {

/// kAffine and kLogisticMixture are coupling layers. kScale is the optional global
/// scale layer x -> s x with a single scalar parameter; it transforms every
/// coordinate and has an empty conditioning set.
enum class LayerKind { kAffine, kLogisticMixture, kScale };

[[nodiscard]] inline std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::kAffine:
      return "affine";
    case LayerKind::kLogisticMixture:
      return "logistic_mixture";
    case LayerKind::kScale:
      return "scale";
  }
  return "?";
}

[[nodiscard]] inline LayerKind parse_layer_kind(const std::string& s) {
  if (s == "affine") return LayerKind::kAffine;
  if (s == "logistic_mixture") return LayerKind::kLogisticMixture;
  if (s == "scale") return LayerKind::kScale;
  throw ConfigError("unknown layer kind '" + s + "'");
}

[[nodiscard]] inline bool is_implicit(LayerKind k) { return k == LayerKind::kLogisticMixture; }

/// Serializable description of one layer.
struct LayerSpec {
  LayerKind kind = LayerKind::kAffine;
  std::vector<std::uint32_t> trans;  ///< transformed coordinates; ignored for kScale
  std::vector<std::size_t> hidden;   ///< conditioner hidden widths
  Activation activation = Activation::kTanh;
  bool weight_norm = false;
  std::size_t mixture_size = 1;  ///< K, logistic mixture only

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct FlowArchitecture {
  std::size_t dim = 2;
  BaseDensity base = BaseDensity::standard_normal(2);
  std::vector<LayerSpec> layers;

  friend bool operator==(const FlowArchitecture&, const FlowArchitecture&) = default;
};

/// One layer bound to its slice of the flow's parameter vector.
class CouplingLayer {
 public:
  CouplingLayer(const LayerSpec& spec, std::size_t dim, std::size_t param_offset)
      : spec_{spec}, dim_{dim}, offset_{param_offset} {
    if (dim == 0) throw ConfigError("flow dimension must be positive");
    if (spec.kind == LayerKind::kScale) {
      trans_.resize(dim);
      std::iota(trans_.begin(), trans_.end(), 0u);
      broadcast_.assign(dim, 0u);
      count_ = 1;
      return;
    }
    std::vector<bool> in_trans(dim, false);
    for (auto i : spec.trans) {
      if (i >= dim || in_trans[i]) throw ConfigError("coupling mask has an invalid or repeated index");
      in_trans[i] = true;
    }
    const std::size_t k = spec.trans.size();
    if (k < 1 || k > dim - 1 || dim < 2) throw ConfigError("coupling layer needs 1 <= k <= d - 1");
    for (std::uint32_t i = 0; i < dim; ++i) (in_trans[i] ? trans_ : cond_).push_back(i);

    std::size_t per_coord = 2;
    if (spec.kind == LayerKind::kLogisticMixture) {
      if (spec.mixture_size == 0) throw ConfigError("mixture size must be positive");
      per_coord = 3 * spec.mixture_size;
    }
    mlp_.widths.push_back(dim - k);
    for (auto w : spec.hidden) mlp_.widths.push_back(w);
    mlp_.widths.push_back(per_coord * k);
    mlp_.activation = spec.activation;
    mlp_.weight_norm = spec.weight_norm;
    mlp_.validate();
    count_ = mlp_.param_count();

    const std::size_t K = spec.kind == LayerKind::kLogisticMixture ? spec.mixture_size : 1;
    const std::size_t parts = spec.kind == LayerKind::kLogisticMixture ? 3 : 2;
    head_parts_.resize(parts);
    for (std::size_t p = 0; p < parts; ++p) {
      head_parts_[p].resize(k * K);
      std::iota(head_parts_[p].begin(), head_parts_[p].end(), static_cast<std::uint32_t>(p * k * K));
    }
    expand_.resize(k * K);
    for (std::size_t i = 0; i < k * K; ++i) expand_[i] = static_cast<std::uint32_t>(i / K);
  }

  [[nodiscard]] LayerKind kind() const noexcept { return spec_.kind; }
  [[nodiscard]] const LayerSpec& spec() const noexcept { return spec_; }
  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] std::span<const std::uint32_t> trans() const noexcept { return trans_; }
  [[nodiscard]] std::span<const std::uint32_t> cond() const noexcept { return cond_; }
  [[nodiscard]] const MlpSpec& conditioner() const noexcept { return mlp_; }
  [[nodiscard]] std::size_t mixture_size() const noexcept { return spec_.mixture_size; }
  [[nodiscard]] std::size_t param_offset() const noexcept { return offset_; }
  [[nodiscard]] std::size_t param_count() const noexcept { return count_; }

  /// Index sets selecting the blocks of the conditioner output ([s, mu] or [logits, locs, log-scales]).
  [[nodiscard]] std::span<const std::uint32_t> head_part(std::size_t p) const { return head_parts_.at(p); }
  /// Maps every mixture component to its coordinate (i * K + j -> i).
  [[nodiscard]] std::span<const std::uint32_t> expand() const noexcept { return expand_; }
  /// d zeros; broadcasts the scalar of a scale layer.
  [[nodiscard]] std::span<const std::uint32_t> broadcast() const noexcept { return broadcast_; }

 private:
  LayerSpec spec_;
  std::size_t dim_;
  std::size_t offset_;
  std::size_t count_ = 0;
  std::vector<std::uint32_t> trans_;
  std::vector<std::uint32_t> cond_;
  MlpSpec mlp_;
  std::vector<std::vector<std::uint32_t>> head_parts_;
  std::vector<std::uint32_t> expand_;
  std::vector<std::uint32_t> broadcast_;
};

/// Ordered layers, base density and the flat parameter vector.
class FlowModel {
 public:
  explicit FlowModel(FlowArchitecture arch) : arch_{std::move(arch)} {
    if (arch_.base.dim != arch_.dim) throw ConfigError("base density dimension differs from flow dimension");
    std::size_t off = 0;
    for (const auto& s : arch_.layers) {
      layers_.emplace_back(s, arch_.dim, off);
      off += layers_.back().param_count();
    }
    params_.assign(off, 0.0);
    for (const auto& l : layers_) {
      if (l.kind() == LayerKind::kScale) params_[l.param_offset()] = 1.0;
    }
  }

  [[nodiscard]] std::size_t dim() const noexcept { return arch_.dim; }
  [[nodiscard]] const BaseDensity& base() const noexcept { return arch_.base; }
  [[nodiscard]] const FlowArchitecture& architecture() const noexcept { return arch_; }
  [[nodiscard]] const std::vector<CouplingLayer>& layers() const noexcept { return layers_; }
  [[nodiscard]] std::size_t layer_count() const noexcept { return layers_.size(); }
  [[nodiscard]] std::size_t param_count() const noexcept { return params_.size(); }
  [[nodiscard]] std::span<const double> params() const noexcept { return params_; }
  [[nodiscard]] std::span<double> params() noexcept { return params_; }
  [[nodiscard]] bool has_implicit_layers() const {
    return std::any_of(layers_.begin(), layers_.end(), [](const auto& l) { return is_implicit(l.kind()); });
  }

  void set_params(std::span<const double> p) {
    if (p.size() != params_.size()) throw ConfigError("parameter vector length mismatch");
    std::copy(p.begin(), p.end(), params_.begin());
  }

  /// Random hidden layers, zero output layers, unit scale: the flow is the identity map.
  ///
  /// A nonzero `location_spread` spaces the mixture locations evenly over
  /// [-spread, spread], which breaks the symmetry between components at the cost
  /// of a non-identity start.
  void initialize_identity(Rng& rng, double location_spread = 0.0) {
    for (const auto& l : layers_) {
      std::span<double> slice(params_.data() + l.param_offset(), l.param_count());
      if (l.kind() == LayerKind::kScale) {
        slice[0] = 1.0;
        continue;
      }
      mlp_init(l.conditioner(), slice, rng, 0.0);
      const std::size_t K = l.mixture_size();
      if (l.kind() == LayerKind::kLogisticMixture && K > 1 && location_spread != 0.0) {
        const std::size_t k = l.trans().size();
        double* bias = slice.data() + slice.size() - l.conditioner().output_width();
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = 0; j < K; ++j) {
            bias[k * K + i * K + j] = location_spread * (2.0 * static_cast<double>(j) / (K - 1) - 1.0);
          }
        }
      }
    }
  }

  /// Random parameters everywhere, with the output layers scaled by `output_scale`.
  /// Scale layers draw s uniformly from [0.5, 2].
  void randomize(Rng& rng, double output_scale) {
    for (const auto& l : layers_) {
      std::span<double> slice(params_.data() + l.param_offset(), l.param_count());
      if (l.kind() == LayerKind::kScale) {
        slice[0] = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
        continue;
      }
      mlp_init(l.conditioner(), slice, rng, output_scale);
    }
  }

 private:
  FlowArchitecture arch_;
  std::vector<CouplingLayer> layers_;
  RealVector params_;
};

// --- masks -------------------------------------------------------------------

/// Layer l transforms the coordinates with index parity l % 2.
[[nodiscard]] inline std::vector<std::uint32_t> alternating_mask(std::size_t dim, std::size_t layer) {
  std::vector<std::uint32_t> t;
  for (std::uint32_t i = 0; i < dim; ++i) {
    if (i % 2 == layer % 2) t.push_back(i);
  }
  return t;
}

/// Layer l transforms the sites (i, j) of a rows x cols lattice with (i + j) % 2 == l % 2.
[[nodiscard]] inline std::vector<std::uint32_t> checkerboard_mask(std::size_t rows, std::size_t cols,
                                                                  std::size_t layer) {
  std::vector<std::uint32_t> t;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if ((i + j) % 2 == layer % 2) t.push_back(static_cast<std::uint32_t>(i * cols + j));
    }
  }
  return t;
}

}  // namespace pathflow

#endif
