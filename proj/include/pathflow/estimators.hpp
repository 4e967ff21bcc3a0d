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


#ifndef PATHFLOW_ESTIMATORS_HPP
#define PATHFLOW_ESTIMATORS_HPP

#include <chrono>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <pathflow/error.hpp>
#include <pathflow/flows/flow.hpp>
#include <pathflow/flows/model.hpp>
#include <pathflow/numerics/dense.hpp>
#include <pathflow/numerics/tape.hpp>
#include <pathflow/parallel.hpp>
#include <pathflow/random.hpp>
#include <pathflow/recursion.hpp>
#include <pathflow/targets/target.hpp>

/**
 * \file
 * \brief Gradient estimators for reverse KL(q || p) and forward KL(p || q).
 *
 * All estimators return the gradient of the divergence (a descent direction is
 * its negation). Reverse estimators consume base samples x0 ~ q0; forward
 * estimators consume target samples x ~ p.
 */

namespace pathflow {

enum class EstimatorTag { kRevStd, kRevPathFast, kRevPathBaseline, kFwdMle, kFwdPath, kFwdGdreg };

inline constexpr EstimatorTag kAllEstimators[] = {EstimatorTag::kRevStd,  EstimatorTag::kRevPathFast,
                                                  EstimatorTag::kRevPathBaseline, EstimatorTag::kFwdMle,
                                                  EstimatorTag::kFwdPath, EstimatorTag::kFwdGdreg};

[[nodiscard]] inline std::string to_string(EstimatorTag t) {
  switch (t) {
    case EstimatorTag::kRevStd:
      return "rev_std";
    case EstimatorTag::kRevPathFast:
      return "rev_path_fast";
    case EstimatorTag::kRevPathBaseline:
      return "rev_path_baseline";
    case EstimatorTag::kFwdMle:
      return "fwd_mle";
    case EstimatorTag::kFwdPath:
      return "fwd_path";
    case EstimatorTag::kFwdGdreg:
      return "fwd_gdreg";
  }
  return "?";
}

[[nodiscard]] inline EstimatorTag parse_estimator(const std::string& s) {
  for (auto t : kAllEstimators) {
    if (to_string(t) == s) return t;
  }
  throw ConfigError("unknown estimator '" + s + "'");
}

[[nodiscard]] inline bool is_reverse(EstimatorTag t) {
  return t == EstimatorTag::kRevStd || t == EstimatorTag::kRevPathFast || t == EstimatorTag::kRevPathBaseline;
}

struct GradEstimate {
  EstimatorTag tag = EstimatorTag::kRevStd;
  RealVector grad;      ///< batch mean of the per-sample gradients
  RealVector grad_sem;  ///< per-coordinate standard error of that mean
  double per_sample_norm_mean = 0.0;
  double per_sample_norm_std = 0.0;
  /// Batch mean of the divergence integrand up to log Z: E + log q for reverse
  /// estimators, -log q for forward ones.
  double loss = 0.0;
  double wall_time = 0.0;  ///< seconds
  std::size_t batch_size = 0;
};

struct EstimatorOptions {
  InverseOptions inverse{};
  RecursionOptions recursion{};
};

/// Mean, standard error and variance of the explicit-parameter score d/dtheta log q(x) at fixed x.
struct ScoreStatistics {
  RealVector mean;
  RealVector sem;
  RealVector variance;
};

namespace detail {

/// Per-worker scratch and running sums.
struct EstimatorWorker {
  Tape tape;
  RealVector sample_grad;
  RealVector adjoint;
  RealVector g;
  RealVector score;
  RealVector sum;
  RealVector sum_sq;
  double norm_sum = 0.0;
  double norm_sq = 0.0;
  double loss_sum = 0.0;
};

inline std::span<double> fresh_adjoint(EstimatorWorker& w) {
  w.adjoint.assign(w.tape.value_count(), 0.0);
  return w.adjoint;
}

/// Runs `per_sample(worker, n)` for n in [0, count), each of which must leave the
/// sample's parameter gradient in worker.sample_grad and return its loss term.
template <class PerSample>
GradEstimate run_batch(EstimatorTag tag, const FlowModel& model, std::size_t count, PerSample&& per_sample) {
  if (count == 0) throw UsageError("estimator called with an empty batch");
  const auto start = std::chrono::steady_clock::now();
  const std::size_t p = model.param_count();
  const std::size_t workers = std::max<std::size_t>(1, std::min(thread_count(), count));
  std::vector<EstimatorWorker> ws(workers);
  parallel_for_workers(
      count,
      [&](std::size_t worker, std::size_t begin, std::size_t end) {
        EstimatorWorker& w = ws[worker];
        w.tape.reset(model.params());
        w.sum.assign(p, 0.0);
        w.sum_sq.assign(p, 0.0);
        for (std::size_t n = begin; n < end; ++n) {
          w.sample_grad.assign(p, 0.0);
          w.tape.reset(model.params());
          w.loss_sum += per_sample(w, n);
          double nn = 0.0;
          for (std::size_t i = 0; i < p; ++i) {
            const double v = w.sample_grad[i];
            w.sum[i] += v;
            w.sum_sq[i] += v * v;
            nn += v * v;
          }
          const double norm = std::sqrt(nn);
          w.norm_sum += norm;
          w.norm_sq += norm * norm;
        }
      },
      workers);

  GradEstimate e;
  e.tag = tag;
  e.batch_size = count;
  e.grad.assign(p, 0.0);
  RealVector sq(p, 0.0);
  double norm_sum = 0.0, norm_sq = 0.0, loss = 0.0;
  for (const auto& w : ws) {
    if (w.sum.empty()) continue;
    for (std::size_t i = 0; i < p; ++i) {
      e.grad[i] += w.sum[i];
      sq[i] += w.sum_sq[i];
    }
    norm_sum += w.norm_sum;
    norm_sq += w.norm_sq;
    loss += w.loss_sum;
  }
  const double n = static_cast<double>(count);
  e.grad_sem.assign(p, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    e.grad[i] /= n;
    if (count > 1) {
      const double var = std::max(0.0, (sq[i] - n * e.grad[i] * e.grad[i]) / (n - 1.0));
      e.grad_sem[i] = std::sqrt(var / n);
    }
  }
  e.per_sample_norm_mean = norm_sum / n;
  e.per_sample_norm_std =
      count > 1 ? std::sqrt(std::max(0.0, (norm_sq - n * e.per_sample_norm_mean * e.per_sample_norm_mean) / (n - 1.0)))
                : 0.0;
  e.loss = loss / n;
  e.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (double v : e.grad) {
    if (!std::isfinite(v)) throw NumericError(-1, "non-finite gradient estimate");
  }
  return e;
}

inline void check_batch(const FlowModel& model, const RealMatrix& batch, const TargetEnergy* target) {
  if (batch.rows() == 0) throw UsageError("estimator called with an empty batch");
  if (batch.cols() != model.dim()) throw ConfigError("batch dimension differs from flow dimension");
  if (target != nullptr && target->dim() != model.dim()) throw ConfigError("target dimension differs from flow");
}

inline RealVector copy_value(const Tape& tape, Var v) {
  auto s = tape.value(v);
  return {s.begin(), s.end()};
}

}  // namespace detail

// --- reverse KL --------------------------------------------------------------

/// Total derivative of mean[E(T(x0)) + log q(T(x0))] by reverse mode through the forward tape.
[[nodiscard]] inline GradEstimate grad_reverse_standard(const FlowModel& model, const TargetEnergy& target,
                                                        const RealMatrix& x0, const EstimatorOptions& = {}) {
  detail::check_batch(model, x0, &target);
  return detail::run_batch(EstimatorTag::kRevStd, model, x0.rows(), [&](detail::EstimatorWorker& w, std::size_t n) {
    const FlowTrace t = record_forward(model, w.tape, x0.row(n));
    const RealVector x = detail::copy_value(w.tape, t.output);
    w.g.resize(x.size());
    target.energy_gradient(x, w.g);
    auto adj = detail::fresh_adjoint(w);
    auto seed = w.tape.adjoint_of(adj, t.output);
    std::copy(w.g.begin(), w.g.end(), seed.begin());
    w.tape.adjoint_of(adj, t.log_q)[0] = 1.0;
    w.tape.backward(adj, w.sample_grad);
    return target.energy(x) + w.tape.value(t.log_q)[0];
  });
}

/// Path gradient from a single forward pass that also carries G = d log q / dx.
[[nodiscard]] inline GradEstimate grad_reverse_path_fast(const FlowModel& model, const TargetEnergy& target,
                                                         const RealMatrix& x0, const EstimatorOptions& opt = {}) {
  detail::check_batch(model, x0, &target);
  return detail::run_batch(
      EstimatorTag::kRevPathFast, model, x0.rows(), [&](detail::EstimatorWorker& w, std::size_t n) {
        const FlowTrace t = forward_with_G(model, w.tape, x0.row(n), w.g, w.adjoint, opt.recursion);
        const RealVector x = detail::copy_value(w.tape, t.output);
        RealVector de(x.size());
        target.energy_gradient(x, de);
        auto adj = detail::fresh_adjoint(w);
        auto seed = w.tape.adjoint_of(adj, t.output);
        for (std::size_t i = 0; i < x.size(); ++i) seed[i] = de[i] + w.g[i];
        w.tape.backward(adj, w.sample_grad);
        return target.energy(x) + w.tape.value(t.log_q)[0];
      });
}

/// Path gradient by the three-pass method: detached forward, G from the inverse
/// pass, then a VJP through a fresh forward pass.
[[nodiscard]] inline GradEstimate grad_reverse_path_baseline(const FlowModel& model, const TargetEnergy& target,
                                                             const RealMatrix& x0, const EstimatorOptions& opt = {}) {
  detail::check_batch(model, x0, &target);
  return detail::run_batch(
      EstimatorTag::kRevPathBaseline, model, x0.rows(), [&](detail::EstimatorWorker& w, std::size_t n) {
        const RealVector x = detail::copy_value(w.tape, record_forward(model, w.tape, x0.row(n)).output);

        w.tape.reset(model.params());
        const FlowTrace inv = record_inverse(model, w.tape, x, opt.inverse);
        auto adj = detail::fresh_adjoint(w);
        w.tape.adjoint_of(adj, inv.log_q)[0] = 1.0;
        w.tape.backward(adj, {});
        const RealVector g(w.tape.adjoint_of(adj, inv.input).begin(), w.tape.adjoint_of(adj, inv.input).end());
        const double log_q = w.tape.value(inv.log_q)[0];

        w.tape.reset(model.params());
        const FlowTrace fwd = record_forward(model, w.tape, x0.row(n));
        const RealVector xf = detail::copy_value(w.tape, fwd.output);
        RealVector de(x.size());
        target.energy_gradient(xf, de);
        adj = detail::fresh_adjoint(w);
        auto seed = w.tape.adjoint_of(adj, fwd.output);
        for (std::size_t i = 0; i < x.size(); ++i) seed[i] = de[i] + g[i];
        w.tape.backward(adj, w.sample_grad);
        return target.energy(xf) + log_q;
      });
}

// --- forward KL --------------------------------------------------------------

/// -mean d/dtheta log q(x) through the inverse tape.
[[nodiscard]] inline GradEstimate grad_forward_mle(const FlowModel& model, const RealMatrix& data,
                                                   const EstimatorOptions& opt = {}) {
  detail::check_batch(model, data, nullptr);
  return detail::run_batch(EstimatorTag::kFwdMle, model, data.rows(), [&](detail::EstimatorWorker& w, std::size_t n) {
    const FlowTrace t = record_inverse(model, w.tape, data.row(n), opt.inverse);
    auto adj = detail::fresh_adjoint(w);
    w.tape.adjoint_of(adj, t.log_q)[0] = -1.0;
    w.tape.backward(adj, w.sample_grad);
    return -w.tape.value(t.log_q)[0];
  });
}

/// Path gradient of the reverse KL between the pulled-back target and q0 in base
/// space: seed G0 - d log q0/dx0 on the inverse tape's x0.
[[nodiscard]] inline GradEstimate grad_forward_path(const FlowModel& model, const TargetEnergy& target,
                                                    const RealMatrix& data, const EstimatorOptions& opt = {}) {
  detail::check_batch(model, data, &target);
  return detail::run_batch(EstimatorTag::kFwdPath, model, data.rows(), [&](detail::EstimatorWorker& w, std::size_t n) {
    const FlowTrace t = inverse_with_G(model, target, w.tape, data.row(n), w.g, w.adjoint, opt.inverse, opt.recursion);
    const RealVector x0 = detail::copy_value(w.tape, t.output);
    RealVector gb(x0.size());
    model.base().log_density_gradient(x0, gb);
    auto adj = detail::fresh_adjoint(w);
    auto seed = w.tape.adjoint_of(adj, t.output);
    for (std::size_t i = 0; i < x0.size(); ++i) seed[i] = w.g[i] - gb[i];
    w.tape.backward(adj, w.sample_grad);
    return -w.tape.value(t.log_q)[0];
  });
}

/// GDReG form: G from the inverse pass, then a VJP through a fresh forward pass
/// from the detached x0 with seed G + dE/dx.
[[nodiscard]] inline GradEstimate grad_forward_gdreg(const FlowModel& model, const TargetEnergy& target,
                                                     const RealMatrix& data, const EstimatorOptions& opt = {}) {
  detail::check_batch(model, data, &target);
  return detail::run_batch(EstimatorTag::kFwdGdreg, model, data.rows(), [&](detail::EstimatorWorker& w, std::size_t n) {
    const FlowTrace inv = record_inverse(model, w.tape, data.row(n), opt.inverse);
    auto adj = detail::fresh_adjoint(w);
    w.tape.adjoint_of(adj, inv.log_q)[0] = 1.0;
    w.tape.backward(adj, {});
    const RealVector g(w.tape.adjoint_of(adj, inv.input).begin(), w.tape.adjoint_of(adj, inv.input).end());
    const RealVector x0 = detail::copy_value(w.tape, inv.output);
    const double log_q = w.tape.value(inv.log_q)[0];

    w.tape.reset(model.params());
    const FlowTrace fwd = record_forward(model, w.tape, x0);
    const RealVector x = detail::copy_value(w.tape, fwd.output);
    RealVector de(x.size());
    target.energy_gradient(x, de);
    adj = detail::fresh_adjoint(w);
    auto seed = w.tape.adjoint_of(adj, fwd.output);
    for (std::size_t i = 0; i < x.size(); ++i) seed[i] = g[i] + de[i];
    w.tape.backward(adj, w.sample_grad);
    return -log_q;
  });
}

/// Dispatch on the tag. `batch` holds base samples for reverse tags and data for forward tags.
[[nodiscard]] inline GradEstimate estimate_gradient(EstimatorTag tag, const FlowModel& model,
                                                    const TargetEnergy& target, const RealMatrix& batch,
                                                    const EstimatorOptions& opt = {}) {
  switch (tag) {
    case EstimatorTag::kRevStd:
      return grad_reverse_standard(model, target, batch, opt);
    case EstimatorTag::kRevPathFast:
      return grad_reverse_path_fast(model, target, batch, opt);
    case EstimatorTag::kRevPathBaseline:
      return grad_reverse_path_baseline(model, target, batch, opt);
    case EstimatorTag::kFwdMle:
      return grad_forward_mle(model, batch, opt);
    case EstimatorTag::kFwdPath:
      return grad_forward_path(model, target, batch, opt);
    case EstimatorTag::kFwdGdreg:
      return grad_forward_gdreg(model, target, batch, opt);
  }
  throw ConfigError("unknown estimator");
}

/// Reverse estimators drawing their own base batch.
[[nodiscard]] inline GradEstimate estimate_reverse(EstimatorTag tag, const FlowModel& model,
                                                   const TargetEnergy& target, std::size_t batch_size, Rng& rng,
                                                   const EstimatorOptions& opt = {}) {
  if (!is_reverse(tag)) throw UsageError("forward estimators need a data batch");
  if (batch_size == 0) throw UsageError("estimator called with an empty batch");
  return estimate_gradient(tag, model, target, model.base().sample(batch_size, rng), opt);
}

// --- score term --------------------------------------------------------------

/// Statistics of the explicit-parameter score at the detached samples x = T(x0).
[[nodiscard]] inline ScoreStatistics score_expectation(const FlowModel& model, const RealMatrix& x0,
                                                       const EstimatorOptions& opt = {}) {
  if (x0.rows() == 0) throw UsageError("score expectation on an empty batch");
  const FlowBatch pushed = flow_forward(model, x0);
  const GradEstimate e = detail::run_batch(
      EstimatorTag::kFwdMle, model, x0.rows(), [&](detail::EstimatorWorker& w, std::size_t n) {
        const FlowTrace t = record_inverse(model, w.tape, pushed.x.row(n), opt.inverse);
        auto adj = detail::fresh_adjoint(w);
        w.tape.adjoint_of(adj, t.log_q)[0] = 1.0;
        w.tape.backward(adj, w.sample_grad);
        return 0.0;
      });
  ScoreStatistics s;
  s.mean = e.grad;
  s.sem = e.grad_sem;
  s.variance.resize(e.grad_sem.size());
  const double n = static_cast<double>(x0.rows());
  for (std::size_t i = 0; i < s.sem.size(); ++i) s.variance[i] = s.sem[i] * s.sem[i] * n;
  return s;
}

[[nodiscard]] inline ScoreStatistics score_expectation(const FlowModel& model, std::size_t batch_size, Rng& rng,
                                                       const EstimatorOptions& opt = {}) {
  if (batch_size == 0) throw UsageError("score expectation on an empty batch");
  return score_expectation(model, model.base().sample(batch_size, rng), opt);
}

}  // namespace pathflow

#endif
