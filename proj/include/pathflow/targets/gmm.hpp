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

#ifndef PATHFLOW_TARGETS_GMM_HPP
#define PATHFLOW_TARGETS_GMM_HPP

#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>
#include <span>
#include <string>

#include <pathflow/error.hpp>
#include <pathflow/numerics/dense.hpp>
#include <pathflow/targets/target.hpp>

/**
 * \file
 * \brief Equal-weight Gaussian mixture with one mode at every corner of {-1, +1}^d.
 *
 * E(x) = -log sum_{mu in {-1,1}^d} N(x; mu, variance * I).
 *
 * Because the centres form a product set, the mixture factorizes into d independent
 * one-dimensional two-mode mixtures. Up to kGmmEnumerationLimit dimensions the energy
 * is evaluated by enumerating all 2^d modes; above that the factorized form is used.
 */

namespace pathflow {

inline constexpr std::size_t kGmmEnumerationLimit = 12;

struct GmmParams {
  std::size_t dim = 6;
  double variance = 0.5;
};

namespace detail {

inline void check_gmm(const GmmParams& t, std::span<const double> x) {
  if (t.dim == 0 || !(t.variance > 0.0)) throw ConfigError("GMM needs dim > 0 and variance > 0");
  if (x.size() != t.dim) throw ConfigError("GMM dimension mismatch");
}

// Log of the Gaussian term for mode index `mask` (bit i set means mu_i = +1).
inline double gmm_log_term(const GmmParams& t, std::span<const double> x, std::size_t mask) {
  double sq = 0.0;
  for (std::size_t i = 0; i < t.dim; ++i) {
    const double mu = (mask >> i) & 1u ? 1.0 : -1.0;
    sq += (x[i] - mu) * (x[i] - mu);
  }
  const double d = static_cast<double>(t.dim);
  return -0.5 * sq / t.variance - 0.5 * d * std::log(2.0 * std::numbers::pi * t.variance);
}

}  // namespace detail

/// Energy by log-sum-exp over all 2^d modes.
[[nodiscard]] inline double gmm_energy_enumerated(const GmmParams& t, std::span<const double> x) {
  detail::check_gmm(t, x);
  if (t.dim > 30) throw ConfigError("GMM enumeration limited to 30 dimensions");
  const std::size_t n_modes = std::size_t{1} << t.dim;
  RealVector terms(n_modes);
  for (std::size_t m = 0; m < n_modes; ++m) terms[m] = detail::gmm_log_term(t, x, m);
  return -log_sum_exp(terms);
}

/// Energy as a sum of per-coordinate two-mode terms.
[[nodiscard]] inline double gmm_energy_factorized(const GmmParams& t, std::span<const double> x) {
  detail::check_gmm(t, x);
  const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi * t.variance);
  double e = 0.0;
  for (std::size_t i = 0; i < t.dim; ++i) {
    const double a = -0.5 * (x[i] - 1.0) * (x[i] - 1.0) / t.variance;
    const double b = -0.5 * (x[i] + 1.0) * (x[i] + 1.0) / t.variance;
    const double m = std::max(a, b);
    e -= log_norm + m + std::log(std::exp(a - m) + std::exp(b - m));
  }
  return e;
}

[[nodiscard]] inline double gmm_energy(const GmmParams& t, std::span<const double> x) {
  return t.dim <= kGmmEnumerationLimit ? gmm_energy_enumerated(t, x) : gmm_energy_factorized(t, x);
}

/// dE/dx: posterior-weighted sum of (x - mu) / variance over modes.
[[nodiscard]] inline RealVector gmm_score(const GmmParams& t, std::span<const double> x) {
  detail::check_gmm(t, x);
  RealVector g(t.dim, 0.0);
  if (t.dim <= kGmmEnumerationLimit) {
    const std::size_t n_modes = std::size_t{1} << t.dim;
    RealVector terms(n_modes);
    for (std::size_t m = 0; m < n_modes; ++m) terms[m] = detail::gmm_log_term(t, x, m);
    const double lse = log_sum_exp(terms);
    for (std::size_t m = 0; m < n_modes; ++m) {
      const double w = std::exp(terms[m] - lse);
      for (std::size_t i = 0; i < t.dim; ++i) {
        const double mu = (m >> i) & 1u ? 1.0 : -1.0;
        g[i] += w * (x[i] - mu);
      }
    }
    for (double& v : g) v /= t.variance;
    return g;
  }
  // Posterior mean of mu_i is tanh(x_i / variance).
  for (std::size_t i = 0; i < t.dim; ++i) g[i] = (x[i] - std::tanh(x[i] / t.variance)) / t.variance;
  return g;
}

class GmmTarget final : public TargetEnergy {
 public:
  explicit GmmTarget(GmmParams p) : p_{p} {
    if (p_.dim == 0 || !(p_.variance > 0.0)) throw ConfigError("GMM needs dim > 0 and variance > 0");
  }

  [[nodiscard]] const GmmParams& params() const noexcept { return p_; }
  [[nodiscard]] std::size_t mode_count() const { return std::size_t{1} << p_.dim; }

  [[nodiscard]] std::size_t dim() const override { return p_.dim; }
  [[nodiscard]] std::string name() const override { return "gmm"; }
  [[nodiscard]] double energy(std::span<const double> x) const override { return gmm_energy(p_, x); }
  void energy_gradient(std::span<const double> x, std::span<double> grad) const override {
    const RealVector g = gmm_score(p_, x);
    std::copy(g.begin(), g.end(), grad.begin());
  }

  [[nodiscard]] bool has_exact_sampler() const override { return true; }
  /// Uniform mode choice per coordinate, then Gaussian noise.
  [[nodiscard]] RealMatrix sample_exact(std::size_t n, Rng& rng) const override {
    RealMatrix out(n, p_.dim);
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> normal(0.0, std::sqrt(p_.variance));
    for (double& v : out.data()) {
      const double mu = coin(rng) ? 1.0 : -1.0;
      v = mu + normal(rng);
    }
    return out;
  }

 private:
  GmmParams p_;
};

}  // namespace pathflow

#endif
