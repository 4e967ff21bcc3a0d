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

#ifndef PATHFLOW_TARGETS_BASE_DENSITY_HPP
#define PATHFLOW_TARGETS_BASE_DENSITY_HPP

#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <utility>

#include <pathflow/error.hpp>
#include <pathflow/numerics/dense.hpp>

namespace pathflow {

/// Base density q0 of a flow: standard normal or a uniform box (low, high)^d.
struct BaseDensity {
  enum class Kind { kStandardNormal, kUniform };

  Kind kind = Kind::kStandardNormal;
  std::size_t dim = 1;
  double low = 0.0;
  double high = 1.0;

  [[nodiscard]] static BaseDensity standard_normal(std::size_t d) { return {Kind::kStandardNormal, d, 0.0, 1.0}; }
  [[nodiscard]] static BaseDensity uniform(std::size_t d, double a, double b) {
    if (!(b > a)) throw ConfigError("uniform base needs low < high");
    return {Kind::kUniform, d, a, b};
  }

  /// log q0(x).
  [[nodiscard]] double log_density(std::span<const double> x) const {
    check_dim(x);
    if (kind == Kind::kStandardNormal) {
      return -0.5 * static_cast<double>(dim) * std::log(2.0 * std::numbers::pi) - 0.5 * dot(x, x);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!(x[i] > low && x[i] < high)) throw DomainError("uniform base evaluated outside its support");
    }
    return -static_cast<double>(dim) * std::log(high - low);
  }

  /// Writes d/dx log q0(x) into `grad`.
  void log_density_gradient(std::span<const double> x, std::span<double> grad) const {
    check_dim(x);
    if (kind == Kind::kStandardNormal) {
      for (std::size_t i = 0; i < x.size(); ++i) grad[i] = -x[i];
      return;
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!(x[i] > low && x[i] < high)) throw DomainError("uniform base evaluated outside its support");
      grad[i] = 0.0;
    }
  }

  template <class Rng>
  [[nodiscard]] RealMatrix sample(std::size_t n, Rng& rng) const {
    RealMatrix out(n, dim);
    if (kind == Kind::kStandardNormal) {
      std::normal_distribution<double> normal(0.0, 1.0);
      for (double& v : out.data()) v = normal(rng);
    } else {
      std::uniform_real_distribution<double> u(low, high);
      for (double& v : out.data()) {
        do {
          v = u(rng);
        } while (!(v > low && v < high));
      }
    }
    return out;
  }

  friend bool operator==(const BaseDensity&, const BaseDensity&) = default;

 private:
  void check_dim(std::span<const double> x) const {
    if (x.size() != dim) throw ConfigError("base density dimension mismatch");
  }
};

/// (log q0(x0), d/dx0 log q0(x0)).
[[nodiscard]] inline std::pair<double, RealVector> base_logdensity_and_grad(const BaseDensity& b,
                                                                            std::span<const double> x0) {
  RealVector g(x0.size());
  const double lp = b.log_density(x0);
  b.log_density_gradient(x0, g);
  return {lp, std::move(g)};
}

}  // namespace pathflow

#endif
