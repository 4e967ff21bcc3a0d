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

#ifndef PATHFLOW_TARGETS_PHI4_HPP
#define PATHFLOW_TARGETS_PHI4_HPP

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>

#include <pathflow/error.hpp>
#include <pathflow/numerics/dense.hpp>
#include <pathflow/random.hpp>
#include <pathflow/targets/target.hpp>

/**
 * \file
 * \brief Scalar phi^4 theory on a periodic two-dimensional lattice.
 *
 * S(phi) = sum_links (phi_u - phi_v)^2 + sum_u (m2 phi_u^2 + lambda phi_u^4)
 *
 * The kinetic sum runs over the 2 * L1 * L2 forward links (right and down, with
 * periodic wrap), i.e. phi^T Lap phi with the positive semi-definite lattice
 * Laplacian Lap = 2 * 2 * delta - adjacency. Sites are row-major: u = i * L2 + j.
 */

namespace pathflow {

struct Phi4Params {
  std::size_t extent_rows = 8;  ///< L1
  std::size_t extent_cols = 4;  ///< L2
  double mass_squared = -1.0;
  double coupling = 0.5;

  [[nodiscard]] std::size_t sites() const { return extent_rows * extent_cols; }
};

namespace detail {

inline void check_phi4(const Phi4Params& t, std::span<const double> phi) {
  if (t.extent_rows == 0 || t.extent_cols == 0) throw ConfigError("phi4 lattice extents must be positive");
  if (t.coupling < 0.0) throw ConfigError("phi4 coupling must be nonnegative");
  if (phi.size() != t.sites()) throw ConfigError("phi4 field length does not match the lattice");
}

inline std::size_t right_of(const Phi4Params& t, std::size_t u) {
  const std::size_t i = u / t.extent_cols;
  const std::size_t j = u % t.extent_cols;
  return i * t.extent_cols + (j + 1) % t.extent_cols;
}

inline std::size_t down_of(const Phi4Params& t, std::size_t u) {
  const std::size_t i = u / t.extent_cols;
  const std::size_t j = u % t.extent_cols;
  return ((i + 1) % t.extent_rows) * t.extent_cols + j;
}

}  // namespace detail

[[nodiscard]] inline double phi4_action(const Phi4Params& t, std::span<const double> phi) {
  detail::check_phi4(t, phi);
  double kinetic = 0.0;
  double potential = 0.0;
  for (std::size_t u = 0; u < phi.size(); ++u) {
    const double a = phi[u] - phi[detail::right_of(t, u)];
    const double b = phi[u] - phi[detail::down_of(t, u)];
    kinetic += a * a + b * b;
    const double p2 = phi[u] * phi[u];
    potential += t.mass_squared * p2 + t.coupling * p2 * p2;
  }
  return kinetic + potential;
}

/// dS/dphi_u = 2 (4 phi_u - sum of neighbours) + 2 m2 phi_u + 4 lambda phi_u^3.
[[nodiscard]] inline RealVector phi4_score(const Phi4Params& t, std::span<const double> phi) {
  detail::check_phi4(t, phi);
  RealVector g(phi.size(), 0.0);
  for (std::size_t u = 0; u < phi.size(); ++u) {
    for (std::size_t v : {detail::right_of(t, u), detail::down_of(t, u)}) {
      const double diff = 2.0 * (phi[u] - phi[v]);
      g[u] += diff;
      g[v] -= diff;
    }
    g[u] += 2.0 * t.mass_squared * phi[u] + 4.0 * t.coupling * phi[u] * phi[u] * phi[u];
  }
  return g;
}

class Phi4Target final : public TargetEnergy {
 public:
  explicit Phi4Target(Phi4Params p) : p_{p} {
    if (p_.extent_rows == 0 || p_.extent_cols == 0) throw ConfigError("phi4 lattice extents must be positive");
    if (p_.coupling < 0.0) throw ConfigError("phi4 coupling must be nonnegative");
  }

  [[nodiscard]] const Phi4Params& params() const noexcept { return p_; }

  [[nodiscard]] std::size_t dim() const override { return p_.sites(); }
  [[nodiscard]] std::string name() const override { return "phi4"; }
  [[nodiscard]] double energy(std::span<const double> x) const override { return phi4_action(p_, x); }
  void energy_gradient(std::span<const double> x, std::span<double> grad) const override {
    const RealVector g = phi4_score(p_, x);
    std::copy(g.begin(), g.end(), grad.begin());
  }

 private:
  Phi4Params p_;
};

/// Random-walk Metropolis fixture generator for phi^4 reference samples.
///
/// Single-site Gaussian proposals of width `step`, `burn_in` sweeps discarded and
/// `thinning` sweeps between recorded configurations. This is a test-data
/// generator, not a production sampler.
struct MetropolisOptions {
  std::size_t burn_in = 500;
  std::size_t thinning = 10;
  double step = 0.5;
};

[[nodiscard]] inline RealMatrix phi4_metropolis_samples(const Phi4Params& t, std::size_t n, Rng& rng,
                                                        const MetropolisOptions& opt = {}) {
  const std::size_t d = t.sites();
  if (d == 0 || opt.thinning == 0 || !(opt.step > 0.0)) throw ConfigError("invalid Metropolis options");
  RealVector phi(d, 0.0);
  std::normal_distribution<double> normal(0.0, opt.step);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::size_t> left(d), up(d), right(d), down(d);
  for (std::size_t u = 0; u < d; ++u) {
    right[u] = detail::right_of(t, u);
    down[u] = detail::down_of(t, u);
    left[right[u]] = u;
    up[down[u]] = u;
  }
  // Local action of site u holding value v, everything else fixed.
  auto local = [&](std::size_t u, double v) {
    const double a = v - phi[right[u]];
    const double b = v - phi[down[u]];
    const double c = v - phi[left[u]];
    const double e = v - phi[up[u]];
    const double v2 = v * v;
    return a * a + b * b + c * c + e * e + t.mass_squared * v2 + t.coupling * v2 * v2;
  };
  auto sweep = [&] {
    for (std::size_t u = 0; u < d; ++u) {
      const double old = phi[u];
      const double prop = old + normal(rng);
      // Self-links on extent-1 axes cancel in the difference, so the local form stays exact.
      const double delta = local(u, prop) - local(u, old);
      if (delta <= 0.0 || unif(rng) < std::exp(-delta)) phi[u] = prop;
    }
  };
  for (std::size_t s = 0; s < opt.burn_in; ++s) sweep();
  RealMatrix out(n, d);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t s = 0; s < opt.thinning; ++s) sweep();
    std::copy(phi.begin(), phi.end(), out.row(k).begin());
  }
  return out;
}

}  // namespace pathflow

#endif
