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


#ifndef PATHFLOW_FLOWS_FLOW_TARGET_HPP
#define PATHFLOW_FLOWS_FLOW_TARGET_HPP

#include <memory>
#include <span>
#include <string>

#include <pathflow/flows/flow.hpp>
#include <pathflow/flows/model.hpp>
#include <pathflow/numerics/tape.hpp>
#include <pathflow/targets/target.hpp>

namespace pathflow {

/// The density of a frozen flow used as a target: E(x) = -log q(x) by the inverse pass.
///
/// A model with the same parameters fits it exactly.
class FlowTarget final : public TargetEnergy {
 public:
  explicit FlowTarget(FlowModel model, InverseOptions opt = {}) : model_{std::move(model)}, opt_{opt} {}

  [[nodiscard]] const FlowModel& model() const noexcept { return model_; }

  [[nodiscard]] std::size_t dim() const override { return model_.dim(); }
  [[nodiscard]] std::string name() const override { return "flow"; }
  [[nodiscard]] double energy(std::span<const double> x) const override {
    check_dim(x);
    return -flow_inverse_logq(model_, x, opt_);
  }
  void energy_gradient(std::span<const double> x, std::span<double> grad) const override {
    check_dim(x);
    Tape tape(model_.params());
    const FlowTrace t = record_inverse(model_, tape, x, opt_);
    RealVector adj(tape.value_count(), 0.0);
    tape.adjoint_of(std::span<double>(adj), t.log_q)[0] = -1.0;
    tape.backward(adj, {});
    auto g = tape.adjoint_of(std::span<const double>(adj), t.input);
    std::copy(g.begin(), g.end(), grad.begin());
  }

  [[nodiscard]] bool has_exact_sampler() const override { return true; }
  [[nodiscard]] RealMatrix sample_exact(std::size_t n, Rng& rng) const override {
    return flow_forward(model_, model_.base().sample(n, rng)).x;
  }

 private:
  FlowModel model_;
  InverseOptions opt_;
};

}  // namespace pathflow

#endif
