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

#ifndef PATHFLOW_NUMERICS_MLP_HPP
#define PATHFLOW_NUMERICS_MLP_HPP

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <pathflow/error.hpp>
#include <pathflow/numerics/dense.hpp>
#include <pathflow/numerics/tape.hpp>

namespace pathflow {

enum class Activation { kTanh, kRelu };

[[nodiscard]] inline std::string to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "relu"; }

[[nodiscard]] inline Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  throw ConfigError("unknown activation '" + s + "'");
}

/// Fully connected network shape. `widths` lists input, hidden and output widths.
struct MlpSpec {
  std::vector<std::size_t> widths;
  Activation activation = Activation::kTanh;
  bool weight_norm = false;

  void validate() const {
    if (widths.size() < 3) throw ConfigError("MLP needs at least one hidden layer");
    for (auto w : widths) {
      if (w == 0) throw ConfigError("MLP layer widths must be positive");
    }
  }

  [[nodiscard]] std::size_t input_width() const { return widths.front(); }
  [[nodiscard]] std::size_t output_width() const { return widths.back(); }

  /// Parameters of dense layer `l` (mapping widths[l] -> widths[l+1]).
  [[nodiscard]] std::size_t layer_param_count(std::size_t l) const {
    const std::size_t in = widths[l];
    const std::size_t out = widths[l + 1];
    return out * in + out + (weight_norm ? out : 0);
  }

  [[nodiscard]] std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += layer_param_count(l);
    return n;
  }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// Records the network on `tape`; parameters are read from the tape's parameter
/// vector starting at `offset`.
inline Var mlp_forward(const MlpSpec& spec, std::size_t offset, Var input, Tape& tape) {
  if (tape.length(input) != spec.input_width()) throw ConfigError("MLP input width mismatch");
  Var h = input;
  std::size_t off = offset;
  const std::size_t n_layers = spec.widths.size() - 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::size_t out = spec.widths[l + 1];
    h = spec.weight_norm ? tape.wn_linear(h, off, out) : tape.linear(h, off, out);
    off += spec.layer_param_count(l);
    if (l + 1 < n_layers) h = spec.activation == Activation::kTanh ? tape.tanh(h) : tape.relu(h);
  }
  return h;
}

/// Convenience overload evaluating on a private tape.
[[nodiscard]] inline RealVector mlp_forward(const MlpSpec& spec, std::span<const double> params,
                                            std::span<const double> input) {
  spec.validate();
  if (params.size() != spec.param_count()) throw ConfigError("MLP parameter slice length mismatch");
  if (input.size() != spec.input_width()) throw ConfigError("MLP input width mismatch");
  Tape tape(params);
  const Var out = mlp_forward(spec, 0, tape.input(input), tape);
  auto v = tape.value(out);
  return {v.begin(), v.end()};
}

/// Writes initial parameters into `params` (length spec.param_count()).
///
/// Hidden layers get Gaussian weights with variance 1/fan_in. The output layer is
/// scaled by `output_scale`; zero makes the network output identically zero, which
/// is how coupling layers start at the identity map.
template <class Rng>
void mlp_init(const MlpSpec& spec, std::span<double> params, Rng& rng, double output_scale) {
  if (params.size() != spec.param_count()) throw ConfigError("MLP parameter slice length mismatch");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::size_t off = 0;
  const std::size_t n_layers = spec.widths.size() - 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::size_t in = spec.widths[l];
    const std::size_t out = spec.widths[l + 1];
    const bool last = l + 1 == n_layers;
    const double sd = 1.0 / std::sqrt(static_cast<double>(in));
    double* w = params.data() + off;
    for (std::size_t i = 0; i < out * in; ++i) w[i] = sd * normal(rng);
    if (spec.weight_norm) {
      double* g = w + out * in;
      double* b = g + out;
      for (std::size_t i = 0; i < out; ++i) {
        double nn = 0.0;
        for (std::size_t j = 0; j < in; ++j) nn += w[i * in + j] * w[i * in + j];
        g[i] = (last ? output_scale : 1.0) * std::sqrt(nn);
        b[i] = last ? output_scale * 0.1 * normal(rng) : 0.0;
      }
    } else {
      double* b = w + out * in;
      if (last) {
        for (std::size_t i = 0; i < out * in; ++i) w[i] *= output_scale;
      }
      for (std::size_t i = 0; i < out; ++i) b[i] = last ? output_scale * 0.1 * normal(rng) : 0.0;
    }
    off += spec.layer_param_count(l);
  }
}

}  // namespace pathflow

#endif
