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


#ifndef PATHFLOW_FLOWS_MIXTURE_HPP
#define PATHFLOW_FLOWS_MIXTURE_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>

#include <pathflow/error.hpp>
#include <pathflow/numerics/dense.hpp>

/**
 * \file
 * \brief Scalar logistic-mixture CDF-logit transform and its bisection inverse.
 *
 * For one coordinate with log-weights lw_j (normalized), locations mu_j and
 * log-scales ls_j, with z_j = (x - mu_j) exp(-ls_j):
 *
 *   A = lse_j(lw_j + log sigmoid(z_j)) = log F(x)
 *   B = lse_j(lw_j + log sigmoid(-z_j)) = log(1 - F(x))
 *   tau(x) = A - B
 *   log tau'(x) = lse_j(lw_j + log sigmoid(z_j) + log sigmoid(-z_j) - ls_j) - A - B
 *
 * Everything stays in log space, so F never rounds to 0 or 1.
 */

namespace pathflow {

/// Bound applied to log-scales of both coupling kinds before exponentiation.
inline constexpr double kLogScaleBound = 8.0;

namespace detail {

struct OnlineLogSumExp {
  double max = -std::numeric_limits<double>::infinity();
  double sum = 0.0;

  void add(double v) {
    if (v == -std::numeric_limits<double>::infinity()) return;
    if (v <= max) {
      sum += std::exp(v - max);
    } else {
      sum = sum * std::exp(max - v) + 1.0;
      max = v;
    }
  }
  [[nodiscard]] double value() const { return max + std::log(sum); }
};

inline std::atomic<std::uint64_t>& bisection_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

}  // namespace detail

/// Number of per-coordinate root solves performed since the last reset, process-wide.
[[nodiscard]] inline std::uint64_t bisection_call_count() {
  return detail::bisection_counter().load(std::memory_order_relaxed);
}
inline void reset_bisection_count() { detail::bisection_counter().store(0, std::memory_order_relaxed); }

/// Normalized mixture coefficients for the k transformed coordinates of one sample.
///
/// Entries are coordinate-major: component j of coordinate i sits at i * K + j.
struct MixtureParams {
  std::size_t coordinates = 0;
  std::size_t components = 1;
  RealVector log_weights;
  RealVector locations;
  RealVector log_scales;  ///< already clamped

  /// Builds the coefficients from a conditioner output laid out as
  /// [logits (kK), locations (kK), raw log-scales (kK)].
  static MixtureParams from_head(std::span<const double> head, std::size_t k, std::size_t K) {
    if (K == 0 || head.size() != 3 * k * K) throw ConfigError("mixture head has the wrong width");
    MixtureParams p;
    p.coordinates = k;
    p.components = K;
    p.log_weights.assign(head.begin(), head.begin() + k * K);
    p.locations.assign(head.begin() + k * K, head.begin() + 2 * k * K);
    p.log_scales.assign(head.begin() + 2 * k * K, head.end());
    for (double& v : p.log_scales) v = std::clamp(v, -kLogScaleBound, kLogScaleBound);
    for (std::size_t i = 0; i < k; ++i) {
      std::span<double> lw(p.log_weights.data() + i * K, K);
      const double norm = log_sum_exp(lw);
      for (double& v : lw) v -= norm;
    }
    return p;
  }
};

struct MixtureValue {
  double tau;
  double log_dtau;
};

/// tau and log tau' of coordinate i at x.
[[nodiscard]] inline MixtureValue mixture_value(const MixtureParams& p, std::size_t i, double x) {
  const std::size_t K = p.components;
  detail::OnlineLogSumExp a, b, c;
  for (std::size_t j = 0; j < K; ++j) {
    const std::size_t q = i * K + j;
    const double z = (x - p.locations[q]) * std::exp(-p.log_scales[q]);
    const double lz = log_sigmoid(z);
    const double lnz = log_sigmoid(-z);
    a.add(p.log_weights[q] + lz);
    b.add(p.log_weights[q] + lnz);
    c.add(p.log_weights[q] + lz + lnz - p.log_scales[q]);
  }
  const double av = a.value();
  const double bv = b.value();
  return {av - bv, c.value() - av - bv};
}

/// tau only; the inner loop of the bisection.
[[nodiscard]] inline double mixture_tau(const MixtureParams& p, std::size_t i, double x) {
  const std::size_t K = p.components;
  detail::OnlineLogSumExp a, b;
  for (std::size_t j = 0; j < K; ++j) {
    const std::size_t q = i * K + j;
    const double z = (x - p.locations[q]) * std::exp(-p.log_scales[q]);
    a.add(p.log_weights[q] + log_sigmoid(z));
    b.add(p.log_weights[q] + log_sigmoid(-z));
  }
  return a.value() - b.value();
}

struct BisectionOptions {
  double tol = 1e-10;
  std::size_t max_doublings = 60;
  std::size_t max_iterations = 400;
};

/// Initial bracket [min mu - 10 max s, max mu + 10 max s] for coordinate i.
[[nodiscard]] inline std::pair<double, double> mixture_bracket(const MixtureParams& p, std::size_t i) {
  const std::size_t K = p.components;
  double lo_mu = std::numeric_limits<double>::infinity();
  double hi_mu = -lo_mu;
  double max_s = 0.0;
  for (std::size_t j = 0; j < K; ++j) {
    const std::size_t q = i * K + j;
    lo_mu = std::min(lo_mu, p.locations[q]);
    hi_mu = std::max(hi_mu, p.locations[q]);
    max_s = std::max(max_s, std::exp(p.log_scales[q]));
  }
  return {lo_mu - 10.0 * max_s, hi_mu + 10.0 * max_s};
}

/// Expands the bracket of coordinate i until it straddles y.
///
/// \throws InversionError after opt.max_doublings expansions on either side.
[[nodiscard]] inline std::pair<double, double> mixture_straddle(const MixtureParams& p, std::size_t i, double y,
                                                                const BisectionOptions& opt,
                                                                std::size_t coordinate) {
  auto [lo, hi] = mixture_bracket(p, i);
  double width = hi - lo;
  std::size_t doublings = 0;
  while (mixture_tau(p, i, lo) > y) {
    if (++doublings > opt.max_doublings) throw InversionError(coordinate, "bracket expansion limit reached");
    lo -= width;
    width *= 2.0;
  }
  width = hi - lo;
  doublings = 0;
  while (mixture_tau(p, i, hi) < y) {
    if (++doublings > opt.max_doublings) throw InversionError(coordinate, "bracket expansion limit reached");
    hi += width;
    width *= 2.0;
  }
  return {lo, hi};
}

/// Solves tau(x) = y for coordinate i by bisection until |tau(x) - y| <= tol.
///
/// Stops early if the bracket can no longer be split in floating point.
/// `coordinate` is the index reported on failure.
[[nodiscard]] inline double mixture_bisect(const MixtureParams& p, std::size_t i, double y,
                                           const BisectionOptions& opt, std::size_t coordinate) {
  if (!(opt.tol > 0.0)) throw ConfigError("bisection tolerance must be positive");
  if (!std::isfinite(y)) throw InversionError(coordinate, "non-finite target value");
  detail::bisection_counter().fetch_add(1, std::memory_order_relaxed);
  auto [lo, hi] = mixture_straddle(p, i, y, opt, coordinate);
  double mid = 0.5 * (lo + hi);
  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double t = mixture_tau(p, i, mid);
    if (std::abs(t - y) <= opt.tol) break;
    (t < y ? lo : hi) = mid;
  }
  return mid;
}

}  // namespace pathflow

#endif
