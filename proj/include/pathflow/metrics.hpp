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


#ifndef PATHFLOW_METRICS_HPP
#define PATHFLOW_METRICS_HPP

#include <cmath>
#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>

#include <pathflow/error.hpp>
#include <pathflow/flows/flow.hpp>
#include <pathflow/flows/model.hpp>
#include <pathflow/numerics/dense.hpp>
#include <pathflow/random.hpp>
#include <pathflow/targets/target.hpp>

/**
 * \file
 * \brief Importance weights w = exp(-E(x)) / q(x) and the quantities built on them.
 */

namespace pathflow {

/// Log importance weights -E(x) - log q(x) with the distribution the x were drawn from.
struct WeightedBatch {
  enum class Source { kModelSamples, kTargetSamples };

  RealVector log_weights;
  Source source = Source::kModelSamples;
};

namespace detail {

inline void check_weights(const WeightedBatch& b, WeightedBatch::Source want, const char* name) {
  if (b.source != want) throw UsageError(std::string(name) + ": weights come from the wrong distribution");
  if (b.log_weights.size() < 2) throw UsageError(std::string(name) + ": need at least two samples");
  for (double v : b.log_weights) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      throw NumericError(-1, std::string(name) + ": invalid log weight");
    }
  }
}

// Subtracts the maximum so every later exp sees arguments <= 0.
inline RealVector centered(std::span<const double> lw, const char* name) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : lw) m = std::max(m, v);
  if (!std::isfinite(m)) throw NumericError(-1, std::string(name) + ": every weight is zero");
  RealVector c(lw.begin(), lw.end());
  for (double& v : c) v -= m;
  return c;
}

}  // namespace detail

/// N / sum(w_hat^2) with w_hat self-normalized to mean one; a fraction in (0, 1].
[[nodiscard]] inline double ess_q(const WeightedBatch& b) {
  detail::check_weights(b, WeightedBatch::Source::kModelSamples, "ess_q");
  const RealVector c = detail::centered(b.log_weights, "ess_q");
  RealVector twice(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) twice[i] = 2.0 * c[i];
  const double n = static_cast<double>(c.size());
  // (sum w)^2 / (N sum w^2)
  return std::exp(2.0 * log_sum_exp(c) - log_sum_exp(twice) - std::log(n));
}

/// 1 / (mean(w) mean(1/w)) over target samples; a fraction in (0, 1].
[[nodiscard]] inline double ess_p(const WeightedBatch& b) {
  detail::check_weights(b, WeightedBatch::Source::kTargetSamples, "ess_p");
  for (double v : b.log_weights) {
    if (!std::isfinite(v)) throw NumericError(-1, "ess_p: zero weight on a target sample");
  }
  const RealVector c = detail::centered(b.log_weights, "ess_p");
  RealVector neg(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) neg[i] = -c[i];
  const double n = static_cast<double>(c.size());
  return std::exp(2.0 * std::log(n) - log_sum_exp(c) - log_sum_exp(neg));
}

/// log Z_q = log mean(w) over model samples.
[[nodiscard]] inline double log_partition_q(const WeightedBatch& b) {
  detail::check_weights(b, WeightedBatch::Source::kModelSamples, "log_partition_q");
  return log_sum_exp(b.log_weights) - std::log(static_cast<double>(b.log_weights.size()));
}

/// log Z_p = -log mean(1/w) over target samples.
[[nodiscard]] inline double log_partition_p(const WeightedBatch& b) {
  detail::check_weights(b, WeightedBatch::Source::kTargetSamples, "log_partition_p");
  RealVector neg(b.log_weights.size());
  for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -b.log_weights[i];
  return -(log_sum_exp(neg) - std::log(static_cast<double>(neg.size())));
}

/// mean(-E(x) - log q(x)) over model samples.
[[nodiscard]] inline double elbo(const WeightedBatch& b) {
  if (b.source != WeightedBatch::Source::kModelSamples) throw UsageError("elbo needs model samples");
  if (b.log_weights.empty()) throw UsageError("elbo of an empty batch");
  return std::accumulate(b.log_weights.begin(), b.log_weights.end(), 0.0) /
         static_cast<double>(b.log_weights.size());
}

/// Draws n samples from the model and weights them.
[[nodiscard]] inline WeightedBatch model_weights(const FlowModel& model, const TargetEnergy& target, std::size_t n,
                                                 Rng& rng) {
  const FlowBatch f = flow_forward(model, model.base().sample(n, rng));
  WeightedBatch b{RealVector(n), WeightedBatch::Source::kModelSamples};
  for (std::size_t i = 0; i < n; ++i) b.log_weights[i] = -target.energy(f.x.row(i)) - f.log_q[i];
  return b;
}

/// Weights target samples, evaluating log q by the inverse pass.
[[nodiscard]] inline WeightedBatch target_weights(const FlowModel& model, const TargetEnergy& target,
                                                  const RealMatrix& data, const InverseOptions& opt = {}) {
  const FlowBatch f = flow_inverse_logq(model, data, opt);
  WeightedBatch b{RealVector(data.rows()), WeightedBatch::Source::kTargetSamples};
  for (std::size_t i = 0; i < data.rows(); ++i) b.log_weights[i] = -target.energy(data.row(i)) - f.log_q[i];
  return b;
}

/// -mean log q(x) over data, by the inverse pass.
[[nodiscard]] inline double nll(const FlowModel& model, const RealMatrix& data, const InverseOptions& opt = {}) {
  if (data.rows() == 0) throw UsageError("nll of an empty batch");
  const FlowBatch f = flow_inverse_logq(model, data, opt);
  return -std::accumulate(f.log_q.begin(), f.log_q.end(), 0.0) / static_cast<double>(data.rows());
}

}  // namespace pathflow

#endif
