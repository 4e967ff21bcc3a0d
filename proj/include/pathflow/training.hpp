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


#ifndef PATHFLOW_TRAINING_HPP
#define PATHFLOW_TRAINING_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <pathflow/error.hpp>
#include <pathflow/estimators.hpp>
#include <pathflow/flows/model.hpp>
#include <pathflow/io/checkpoint.hpp>
#include <pathflow/metrics.hpp>
#include <pathflow/numerics/dense.hpp>
#include <pathflow/random.hpp>
#include <pathflow/targets/target.hpp>

namespace pathflow {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  RealVector m;
  RealVector v;
  std::uint64_t step = 0;
  std::uint64_t skipped = 0;  ///< updates rejected for non-finite gradients
};

/// One Adam update with bias correction. A non-finite gradient leaves every
/// parameter and moment untouched, bumps `skipped` and returns false.
inline bool adam_step(std::span<double> params, std::span<const double> grad, AdamState& s, const AdamConfig& c,
                      double lr) {
  if (grad.size() != params.size()) throw ConfigError("gradient and parameter lengths differ");
  if (!all_finite(grad)) {
    ++s.skipped;
    return false;
  }
  if (s.m.size() != params.size()) {
    s.m.assign(params.size(), 0.0);
    s.v.assign(params.size(), 0.0);
  }
  ++s.step;
  const double t = static_cast<double>(s.step);
  const double c1 = 1.0 - std::pow(c.beta1, t);
  const double c2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m[i] = c.beta1 * s.m[i] + (1.0 - c.beta1) * grad[i];
    s.v[i] = c.beta2 * s.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
    params[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + c.epsilon);
  }
  return true;
}

/// Rescales `grad` in place so its l2 norm is at most max_norm. Returns the factor applied.
inline double clip_global_norm(std::span<double> grad, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip norm must be positive");
  const double n = norm2(grad);
  if (!(n > max_norm)) return 1.0;
  const double f = max_norm / n;
  for (double& g : grad) g *= f;
  return f;
}

struct TrainConfig {
  EstimatorTag estimator = EstimatorTag::kRevPathFast;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  AdamConfig adam{};
  double grad_clip = 0.0;               ///< 0 disables clipping
  std::size_t lr_decay_patience = 0;    ///< evals without improvement before decay; 0 disables
  double lr_decay_factor = 0.5;
  std::size_t max_steps = 1000;
  std::size_t eval_interval = 100;
  std::size_t eval_batch = 2560;        ///< model samples for ESS_q and ELBO
  std::size_t max_retries = 3;
  std::uint64_t seed = 1;
  std::filesystem::path checkpoint_path;  ///< empty: keep the best parameters in memory only
  EstimatorOptions estimator_options{};

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(adam.beta1 > 0.0 && adam.beta1 < 1.0)) throw ConfigError("beta1 must lie in (0, 1)");
    if (!(adam.beta2 > 0.0 && adam.beta2 < 1.0)) throw ConfigError("beta2 must lie in (0, 1)");
    if (!(adam.epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (grad_clip < 0.0) throw ConfigError("grad_clip must be nonnegative");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) throw ConfigError("lr_decay_factor must lie in (0, 1]");
    if (eval_interval < 1) throw ConfigError("eval_interval must be at least 1");
    if (eval_batch < 2) throw ConfigError("eval_batch must be at least 2");
  }
};

/// Samples available to training and evaluation. Forward estimators draw their
/// minibatches from `train`; `test` feeds the held-out NLL; `reference` holds
/// target samples for ESS_p.
struct TrainData {
  RealMatrix train;
  RealMatrix test;
  RealMatrix reference;
};

inline constexpr double kNotAvailable = std::numeric_limits<double>::quiet_NaN();

struct TrainRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = kNotAvailable;
  double ess_q = kNotAvailable;
  double ess_p = kNotAvailable;
  double nll_train = kNotAvailable;
  double nll_test = kNotAvailable;
  double elbo = kNotAvailable;
  double grad_norm_mean = kNotAvailable;
  double grad_norm_std = kNotAvailable;
  std::size_t failures = 0;  ///< cumulative failed estimator attempts
  double wall_time = 0.0;    ///< seconds since the start of training
};

struct TrainHistory {
  std::vector<TrainRecord> records;
  std::size_t best_step = 0;
  double best_metric = kNotAvailable;
  std::size_t skipped_updates = 0;
  std::size_t attempts = 0;
  std::size_t failures = 0;
};

/// Thrown when more than 10% of estimator attempts failed.
class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& what, TrainHistory history) : Error(what), history_{std::move(history)} {}
  [[nodiscard]] const TrainHistory& history() const noexcept { return history_; }

 private:
  TrainHistory history_;
};

/// Evaluates one history row at the current parameters.
[[nodiscard]] inline TrainRecord evaluate(const FlowModel& model, const TargetEnergy& target, const TrainData& data,
                                          std::size_t eval_batch, Rng& rng, const InverseOptions& inv = {}) {
  TrainRecord r;
  const WeightedBatch wq = model_weights(model, target, eval_batch, rng);
  r.ess_q = ess_q(wq);
  r.elbo = elbo(wq);
  if (data.reference.rows() >= 2) r.ess_p = ess_p(target_weights(model, target, data.reference, inv));
  if (data.train.rows() > 0) r.nll_train = nll(model, data.train, inv);
  if (data.test.rows() > 0) r.nll_test = nll(model, data.test, inv);
  return r;
}

/// Optimizes `model` in place. The returned history starts with the evaluation of
/// the initial parameters at step 0. On return the model holds the final
/// parameters; the best-ESS parameters are written to the checkpoint path.
///
/// `on_record` is called after each evaluation row is appended.
template <class OnRecord>
TrainHistory train(FlowModel& model, const TargetEnergy& target, const TrainConfig& cfg, const TrainData& data,
                   OnRecord&& on_record) {
  cfg.validate();
  if (!is_reverse(cfg.estimator) && data.train.rows() == 0) {
    throw ConfigError("forward-KL estimators need training data");
  }
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  Rng batch_rng = make_rng(cfg.seed, 1);
  Rng eval_rng = make_rng(cfg.seed, 2);
  AdamState adam;
  TrainHistory h;
  double lr = cfg.learning_rate;
  std::size_t stale = 0;

  std::vector<std::size_t> order(data.train.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  auto next_batch = [&]() -> RealMatrix {
    if (is_reverse(cfg.estimator)) return model.base().sample(cfg.batch_size, batch_rng);
    RealMatrix b(cfg.batch_size, model.dim());
    for (std::size_t n = 0; n < cfg.batch_size; ++n) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), batch_rng);
        cursor = 0;
      }
      auto row = data.train.row(order[cursor++]);
      std::copy(row.begin(), row.end(), b.row(n).begin());
    }
    return b;
  };

  std::optional<GradEstimate> last;
  auto record = [&](std::size_t step) {
    TrainRecord r = evaluate(model, target, data, cfg.eval_batch, eval_rng, cfg.estimator_options.inverse);
    r.step = step;
    r.lr = lr;
    if (last) {
      r.loss = last->loss;
      r.grad_norm_mean = last->per_sample_norm_mean;
      r.grad_norm_std = last->per_sample_norm_std;
    }
    r.failures = h.failures;
    r.wall_time = elapsed();
    h.records.push_back(r);

    const double tracked = std::isfinite(r.ess_p) ? r.ess_p : r.ess_q;
    if (std::isfinite(tracked) && (!std::isfinite(h.best_metric) || tracked > h.best_metric)) {
      h.best_metric = tracked;
      h.best_step = step;
      stale = 0;
      if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path, model, step, tracked);
    } else if (step > 0 && cfg.lr_decay_patience > 0 && ++stale >= cfg.lr_decay_patience) {
      lr *= cfg.lr_decay_factor;
      stale = 0;
    }
    on_record(h.records.back());
  };

  record(0);
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    bool done = false;
    for (std::size_t attempt = 0; attempt <= cfg.max_retries && !done; ++attempt) {
      ++h.attempts;
      try {
        last = estimate_gradient(cfg.estimator, model, target, next_batch(), cfg.estimator_options);
        done = true;
      } catch (const NumericError&) {
        ++h.failures;
      } catch (const InversionError&) {
        ++h.failures;
      } catch (const DomainError&) {
        ++h.failures;
      }
      if (h.attempts >= 20 && 10 * h.failures > h.attempts) {
        throw TrainingAborted("estimator failure rate exceeded 10%", h);
      }
    }
    if (done) {
      if (cfg.grad_clip > 0.0) clip_global_norm(last->grad, cfg.grad_clip);
      if (!adam_step(model.params(), last->grad, adam, cfg.adam, lr)) ++h.skipped_updates;
    }
    if (step % cfg.eval_interval == 0 || step == cfg.max_steps) record(step);
  }
  return h;
}

inline TrainHistory train(FlowModel& model, const TargetEnergy& target, const TrainConfig& cfg,
                          const TrainData& data) {
  return train(model, target, cfg, data, [](const TrainRecord&) {});
}

}  // namespace pathflow

#endif
