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

#ifndef PATHFLOW_TARGETS_TARGET_HPP
#define PATHFLOW_TARGETS_TARGET_HPP

#include <cstddef>
#include <memory>
#include <span>
#include <string>

#include <pathflow/error.hpp>
#include <pathflow/numerics/dense.hpp>
#include <pathflow/random.hpp>
#include <pathflow/targets/base_density.hpp>

namespace pathflow {

/// Unnormalized target p(x) = exp(-E(x)) / Z. Only E and dE/dx are exposed; Z never is.
///
/// Implementations are immutable and safe to share between threads.
class TargetEnergy {
 public:
  virtual ~TargetEnergy() = default;

  [[nodiscard]] virtual std::size_t dim() const = 0;
  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual double energy(std::span<const double> x) const = 0;
  /// Writes dE/dx into `grad`.
  virtual void energy_gradient(std::span<const double> x, std::span<double> grad) const = 0;

  /// Whether sample_exact() can draw i.i.d. samples from p.
  [[nodiscard]] virtual bool has_exact_sampler() const { return false; }
  [[nodiscard]] virtual RealMatrix sample_exact(std::size_t /*n*/, Rng& /*rng*/) const {
    throw UsageError("target '" + name() + "' has no exact sampler");
  }

 protected:
  void check_dim(std::span<const double> x) const {
    if (x.size() != dim()) throw ConfigError("target dimension mismatch");
  }
};

/// The base density used as a target: E(x) = -log q0(x). A flow at the identity fits it exactly.
class BaseSelfTarget final : public TargetEnergy {
 public:
  explicit BaseSelfTarget(BaseDensity base) : base_{base} {}

  [[nodiscard]] std::size_t dim() const override { return base_.dim; }
  [[nodiscard]] std::string name() const override { return "base"; }
  [[nodiscard]] double energy(std::span<const double> x) const override { return -base_.log_density(x); }
  void energy_gradient(std::span<const double> x, std::span<double> grad) const override {
    base_.log_density_gradient(x, grad);
    for (double& g : grad) g = -g;
  }
  [[nodiscard]] bool has_exact_sampler() const override { return true; }
  [[nodiscard]] RealMatrix sample_exact(std::size_t n, Rng& rng) const override { return base_.sample(n, rng); }

 private:
  BaseDensity base_;
};

/// Adds a constant to another target's energy. Gradients are forwarded untouched.
class ShiftedTarget final : public TargetEnergy {
 public:
  ShiftedTarget(std::shared_ptr<const TargetEnergy> inner, double shift) : inner_{std::move(inner)}, shift_{shift} {}

  [[nodiscard]] std::size_t dim() const override { return inner_->dim(); }
  [[nodiscard]] std::string name() const override { return inner_->name() + "+const"; }
  [[nodiscard]] double energy(std::span<const double> x) const override { return inner_->energy(x) + shift_; }
  void energy_gradient(std::span<const double> x, std::span<double> grad) const override {
    inner_->energy_gradient(x, grad);
  }
  [[nodiscard]] bool has_exact_sampler() const override { return inner_->has_exact_sampler(); }
  [[nodiscard]] RealMatrix sample_exact(std::size_t n, Rng& rng) const override {
    return inner_->sample_exact(n, rng);
  }

 private:
  std::shared_ptr<const TargetEnergy> inner_;
  double shift_;
};

}  // namespace pathflow

#endif
