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


#ifndef PATHFLOW_CONFIG_HPP
#define PATHFLOW_CONFIG_HPP

#include <cstddef>
#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include <pathflow/error.hpp>
#include <pathflow/estimators.hpp>
#include <pathflow/flows/mixture.hpp>
#include <pathflow/flows/model.hpp>
#include <pathflow/numerics/mlp.hpp>
#include <pathflow/random.hpp>
#include <pathflow/targets/gmm.hpp>
#include <pathflow/targets/phi4.hpp>
#include <pathflow/targets/target.hpp>
#include <pathflow/training.hpp>

/**
 * \file
 * \brief Experiment configuration: strict JSON schema, presets and builders.
 *
 * Every object rejects keys it does not know. Missing keys take the defaults of
 * the corresponding struct. README.md lists every key.
 */

namespace pathflow {

inline constexpr int kConfigVersion = 1;

struct TargetConfig {
  std::string kind = "gmm";  ///< gmm | phi4 | normal
  std::size_t dim = 6;       ///< gmm and normal
  double variance = 0.5;     ///< gmm
  std::size_t rows = 8;      ///< phi4
  std::size_t cols = 4;      ///< phi4
  double mass_squared = -1.0;
  double coupling = 1.0;

  [[nodiscard]] std::size_t dimension() const { return kind == "phi4" ? rows * cols : dim; }
};

struct FlowConfig {
  std::size_t layer_count = 6;
  std::string layer_kind = "affine";  ///< affine | logistic_mixture | mixed
  std::string mask = "alternating";   ///< alternating | checkerboard
  std::vector<std::size_t> hidden = {32, 32};
  std::string activation = "tanh";
  bool weight_norm = false;
  std::size_t mixture_size = 4;
  bool scale_layer = false;
  double init_scale = 1.0;
  double location_spread = 0.0;
};

struct MetropolisConfig {
  std::size_t burn_in = 500;
  std::size_t thinning = 10;
  double step = 0.5;
};

struct DataConfig {
  std::size_t train_samples = 0;
  std::size_t test_samples = 0;
  std::size_t reference_samples = 2000;
  MetropolisConfig metropolis{};
};

struct BenchConfig {
  std::size_t repetitions = 50;
  std::size_t warmup = 5;
  std::vector<std::size_t> batch_sizes = {64, 1024};
  bool large_batch = false;  ///< adds batch size 8192
};

struct GradcheckConfig {
  std::size_t flows = 12;
  std::vector<std::size_t> dims = {2, 5, 8};
  std::size_t batch = 32;
  double tolerance = 0.0;  ///< 0 keeps the per-suite defaults
};

struct ExperimentConfig {
  int version = kConfigVersion;
  std::string name = "custom";
  std::uint64_t seed = 1;
  TargetConfig target{};
  FlowConfig flow{};
  TrainConfig train{};
  DataConfig data{};
  BisectionOptions bisection{};
  BenchConfig bench{};
  GradcheckConfig gradcheck{};
};

// --- strict parsing ------------------------------------------------------------

namespace detail {

class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string path) : j_{j}, path_{std::move(path)} {
    if (!j.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class T>
  void read(const char* key, T& dst) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      dst = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type");
    }
  }

  [[nodiscard]] const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
  if (c.version != kConfigVersion) throw ConfigError("unsupported config version " + std::to_string(c.version));
  const auto& t = c.target;
  if (t.kind != "gmm" && t.kind != "phi4" && t.kind != "normal") {
    throw ConfigError("target.kind must be gmm, phi4 or normal");
  }
  if (t.dimension() == 0) throw ConfigError("target dimension must be positive");
  if (t.kind == "gmm" && !(t.variance > 0.0)) throw ConfigError("target.variance must be positive");
  if (t.kind == "phi4" && t.coupling < 0.0) throw ConfigError("target.coupling must be nonnegative");
  const auto& f = c.flow;
  if (f.layer_kind != "affine" && f.layer_kind != "logistic_mixture" && f.layer_kind != "mixed") {
    throw ConfigError("flow.layer_kind must be affine, logistic_mixture or mixed");
  }
  if (f.mask != "alternating" && f.mask != "checkerboard") throw ConfigError("flow.mask must be alternating or checkerboard");
  if (f.mask == "checkerboard" && t.kind != "phi4") throw ConfigError("checkerboard masks need a lattice target");
  if (f.layer_count > 0 && t.dimension() < 2) throw ConfigError("coupling layers need dimension >= 2");
  if (f.layer_count > 0 && f.hidden.empty()) throw ConfigError("flow.hidden needs at least one width");
  for (auto w : f.hidden) {
    if (w == 0) throw ConfigError("flow.hidden widths must be positive");
  }
  (void)parse_activation(f.activation);
  if (f.mixture_size == 0) throw ConfigError("flow.mixture_size must be positive");
  if (f.layer_count == 0 && !f.scale_layer) throw ConfigError("flow has no layers");
  if (f.init_scale == 0.0) throw ConfigError("flow.init_scale must be nonzero");
  c.train.validate();
  if (!(c.bisection.tol > 0.0)) throw ConfigError("bisection.tol must be positive");
  if (c.bench.repetitions == 0 || c.bench.batch_sizes.empty()) throw ConfigError("bench needs repetitions and batch sizes");
  if (c.gradcheck.flows == 0 || c.gradcheck.dims.empty() || c.gradcheck.batch < 2) {
    throw ConfigError("gradcheck needs flows, dims and a batch of at least 2");
  }
  for (auto d : c.gradcheck.dims) {
    if (d < 2) throw ConfigError("gradcheck dims must be at least 2");
  }
  if (!is_reverse(c.train.estimator) && c.data.train_samples == 0) {
    throw ConfigError("forward-KL estimators need data.train_samples > 0");
  }
}

[[nodiscard]] inline ExperimentConfig preset(const std::string& name);

/// Parses a config document. An optional "preset" key expands the named preset
/// first; every other key present overrides it.
[[nodiscard]] inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::StrictObject root(j, "config");
  root.read("version", c.version);
  if (c.version != kConfigVersion) throw ConfigError("unsupported config version " + std::to_string(c.version));
  std::string base;
  root.read("preset", base);
  if (!base.empty()) c = preset(base);
  root.read("name", c.name);
  root.read("seed", c.seed);
  if (const auto* t = root.child("target")) {
    detail::StrictObject o(*t, "target");
    o.read("kind", c.target.kind);
    o.read("dim", c.target.dim);
    o.read("variance", c.target.variance);
    o.read("rows", c.target.rows);
    o.read("cols", c.target.cols);
    o.read("mass_squared", c.target.mass_squared);
    o.read("coupling", c.target.coupling);
    o.finish();
  }
  if (const auto* f = root.child("flow")) {
    detail::StrictObject o(*f, "flow");
    o.read("layer_count", c.flow.layer_count);
    o.read("layer_kind", c.flow.layer_kind);
    o.read("mask", c.flow.mask);
    o.read("hidden", c.flow.hidden);
    o.read("activation", c.flow.activation);
    o.read("weight_norm", c.flow.weight_norm);
    o.read("mixture_size", c.flow.mixture_size);
    o.read("scale_layer", c.flow.scale_layer);
    o.read("init_scale", c.flow.init_scale);
    o.read("location_spread", c.flow.location_spread);
    o.finish();
  }
  if (const auto* t = root.child("train")) {
    detail::StrictObject o(*t, "train");
    std::string est = to_string(c.train.estimator);
    o.read("estimator", est);
    c.train.estimator = parse_estimator(est);
    o.read("batch_size", c.train.batch_size);
    o.read("learning_rate", c.train.learning_rate);
    o.read("beta1", c.train.adam.beta1);
    o.read("beta2", c.train.adam.beta2);
    o.read("epsilon", c.train.adam.epsilon);
    o.read("grad_clip", c.train.grad_clip);
    o.read("lr_decay_patience", c.train.lr_decay_patience);
    o.read("lr_decay_factor", c.train.lr_decay_factor);
    o.read("max_steps", c.train.max_steps);
    o.read("eval_interval", c.train.eval_interval);
    o.read("eval_batch", c.train.eval_batch);
    o.read("max_retries", c.train.max_retries);
    o.finish();
  }
  if (const auto* d = root.child("data")) {
    detail::StrictObject o(*d, "data");
    o.read("train_samples", c.data.train_samples);
    o.read("test_samples", c.data.test_samples);
    o.read("reference_samples", c.data.reference_samples);
    if (const auto* m = o.child("metropolis")) {
      detail::StrictObject mo(*m, "data.metropolis");
      mo.read("burn_in", c.data.metropolis.burn_in);
      mo.read("thinning", c.data.metropolis.thinning);
      mo.read("step", c.data.metropolis.step);
      mo.finish();
    }
    o.finish();
  }
  if (const auto* b = root.child("bisection")) {
    detail::StrictObject o(*b, "bisection");
    o.read("tol", c.bisection.tol);
    o.read("max_doublings", c.bisection.max_doublings);
    o.read("max_iterations", c.bisection.max_iterations);
    o.finish();
  }
  if (const auto* b = root.child("bench")) {
    detail::StrictObject o(*b, "bench");
    o.read("repetitions", c.bench.repetitions);
    o.read("warmup", c.bench.warmup);
    o.read("batch_sizes", c.bench.batch_sizes);
    o.read("large_batch", c.bench.large_batch);
    o.finish();
  }
  if (const auto* g = root.child("gradcheck")) {
    detail::StrictObject o(*g, "gradcheck");
    o.read("flows", c.gradcheck.flows);
    o.read("dims", c.gradcheck.dims);
    o.read("batch", c.gradcheck.batch);
    o.read("tolerance", c.gradcheck.tolerance);
    o.finish();
  }
  root.finish();
  validate(c);
  return c;
}

/// Fully explicit document; config_from_json(config_to_json(c)) reproduces c.
[[nodiscard]] inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  const auto& t = c.train;
  return {
      {"version", c.version},
      {"name", c.name},
      {"seed", c.seed},
      {"target",
       {{"kind", c.target.kind},
        {"dim", c.target.dim},
        {"variance", c.target.variance},
        {"rows", c.target.rows},
        {"cols", c.target.cols},
        {"mass_squared", c.target.mass_squared},
        {"coupling", c.target.coupling}}},
      {"flow",
       {{"layer_count", c.flow.layer_count},
        {"layer_kind", c.flow.layer_kind},
        {"mask", c.flow.mask},
        {"hidden", c.flow.hidden},
        {"activation", c.flow.activation},
        {"weight_norm", c.flow.weight_norm},
        {"mixture_size", c.flow.mixture_size},
        {"scale_layer", c.flow.scale_layer},
        {"init_scale", c.flow.init_scale},
        {"location_spread", c.flow.location_spread}}},
      {"train",
       {{"estimator", to_string(t.estimator)},
        {"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"beta1", t.adam.beta1},
        {"beta2", t.adam.beta2},
        {"epsilon", t.adam.epsilon},
        {"grad_clip", t.grad_clip},
        {"lr_decay_patience", t.lr_decay_patience},
        {"lr_decay_factor", t.lr_decay_factor},
        {"max_steps", t.max_steps},
        {"eval_interval", t.eval_interval},
        {"eval_batch", t.eval_batch},
        {"max_retries", t.max_retries}}},
      {"data",
       {{"train_samples", c.data.train_samples},
        {"test_samples", c.data.test_samples},
        {"reference_samples", c.data.reference_samples},
        {"metropolis",
         {{"burn_in", c.data.metropolis.burn_in},
          {"thinning", c.data.metropolis.thinning},
          {"step", c.data.metropolis.step}}}}},
      {"bisection",
       {{"tol", c.bisection.tol},
        {"max_doublings", c.bisection.max_doublings},
        {"max_iterations", c.bisection.max_iterations}}},
      {"bench",
       {{"repetitions", c.bench.repetitions},
        {"warmup", c.bench.warmup},
        {"batch_sizes", c.bench.batch_sizes},
        {"large_batch", c.bench.large_batch}}},
      {"gradcheck",
       {{"flows", c.gradcheck.flows},
        {"dims", c.gradcheck.dims},
        {"batch", c.gradcheck.batch},
        {"tolerance", c.gradcheck.tolerance}}},
  };
}

// --- presets -----------------------------------------------------------------

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"gmm_d6", "gmm_d2_small_data", "phi4_small", "implicit_demo",
                                                 "scale_flow"};
  return names;
}

[[nodiscard]] inline ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  if (name == "gmm_d6") {
    c.target = {"gmm", 6, 0.5};
    c.flow.layer_count = 6;
    c.flow.hidden = {32, 32};
    c.flow.weight_norm = true;
    c.train.estimator = EstimatorTag::kRevPathFast;
    c.train.batch_size = 512;
    c.train.learning_rate = 1e-3;
    c.train.max_steps = 2000;
    c.train.eval_interval = 200;
    c.train.eval_batch = 5120;
    c.data.reference_samples = 5000;
  } else if (name == "gmm_d2_small_data") {
    c.target = {"gmm", 2, 0.5};
    c.flow.layer_count = 6;
    c.flow.hidden = {32, 32};
    c.train.estimator = EstimatorTag::kFwdPath;
    c.train.batch_size = 250;
    c.train.learning_rate = 3e-3;
    c.train.max_steps = 1500;
    c.train.eval_interval = 100;
    c.train.eval_batch = 2000;
    c.data.train_samples = 750;
    c.data.test_samples = 5000;
    c.data.reference_samples = 5000;
  } else if (name == "phi4_small") {
    c.target.kind = "phi4";
    c.target.rows = 8;
    c.target.cols = 4;
    c.target.mass_squared = -1.0;
    c.target.coupling = 1.0;
    c.flow.layer_count = 8;
    c.flow.mask = "checkerboard";
    c.flow.hidden = {64, 64, 64, 64};
    c.flow.scale_layer = true;
    c.train.estimator = EstimatorTag::kRevPathFast;
    c.train.batch_size = 256;
    c.train.learning_rate = 5e-4;
    c.train.grad_clip = 1.0;
    c.train.max_steps = 2000;
    c.train.eval_interval = 200;
    c.train.eval_batch = 2560;
    c.data.reference_samples = 1000;
    c.bench.batch_sizes = {64, 1024};
  } else if (name == "implicit_demo") {
    c.target.kind = "phi4";
    c.target.rows = 8;
    c.target.cols = 4;
    c.target.mass_squared = -1.0;
    c.target.coupling = 1.0;
    c.flow.layer_count = 4;
    c.flow.layer_kind = "logistic_mixture";
    c.flow.mask = "checkerboard";
    c.flow.hidden = {64, 64};
    c.flow.mixture_size = 4;
    c.flow.location_spread = 1.0;
    c.train.estimator = EstimatorTag::kRevPathFast;
    c.train.batch_size = 128;
    c.train.learning_rate = 5e-4;
    c.train.grad_clip = 1.0;
    c.train.max_steps = 500;
    c.train.eval_interval = 100;
    c.train.eval_batch = 1280;
    c.data.reference_samples = 500;
  } else if (name == "scale_flow") {
    c.target = {"normal", 1};
    c.flow.layer_count = 0;
    c.flow.scale_layer = true;
    c.flow.init_scale = 2.0;
    c.train.estimator = EstimatorTag::kRevPathFast;
    c.train.batch_size = 256;
    c.train.learning_rate = 1e-2;
    c.train.max_steps = 2000;
    c.train.eval_interval = 100;
    c.train.eval_batch = 2560;
    c.data.reference_samples = 2000;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  validate(c);
  return c;
}

// --- builders ----------------------------------------------------------------

[[nodiscard]] inline std::shared_ptr<const TargetEnergy> build_target(const TargetConfig& t) {
  if (t.kind == "gmm") return std::make_shared<GmmTarget>(GmmParams{t.dim, t.variance});
  if (t.kind == "phi4") return std::make_shared<Phi4Target>(Phi4Params{t.rows, t.cols, t.mass_squared, t.coupling});
  if (t.kind == "normal") return std::make_shared<BaseSelfTarget>(BaseDensity::standard_normal(t.dim));
  throw ConfigError("unknown target kind '" + t.kind + "'");
}

[[nodiscard]] inline FlowArchitecture build_architecture(const ExperimentConfig& c) {
  const std::size_t d = c.target.dimension();
  FlowArchitecture a;
  a.dim = d;
  a.base = BaseDensity::standard_normal(d);
  for (std::size_t l = 0; l < c.flow.layer_count; ++l) {
    LayerSpec s;
    if (c.flow.layer_kind == "affine") {
      s.kind = LayerKind::kAffine;
    } else if (c.flow.layer_kind == "logistic_mixture") {
      s.kind = LayerKind::kLogisticMixture;
    } else {
      s.kind = l % 2 == 0 ? LayerKind::kAffine : LayerKind::kLogisticMixture;
    }
    s.trans = c.flow.mask == "checkerboard" ? checkerboard_mask(c.target.rows, c.target.cols, l)
                                            : alternating_mask(d, l);
    s.hidden = c.flow.hidden;
    s.activation = parse_activation(c.flow.activation);
    s.weight_norm = c.flow.weight_norm;
    s.mixture_size = c.flow.mixture_size;
    a.layers.push_back(std::move(s));
  }
  if (c.flow.scale_layer) {
    LayerSpec s;
    s.kind = LayerKind::kScale;
    a.layers.push_back(std::move(s));
  }
  return a;
}

/// Identity-initialized model (scale layers start at flow.init_scale).
[[nodiscard]] inline FlowModel build_model(const ExperimentConfig& c) {
  FlowModel m(build_architecture(c));
  Rng rng = make_rng(c.seed, 0);
  m.initialize_identity(rng, c.flow.location_spread);
  for (const auto& l : m.layers()) {
    if (l.kind() == LayerKind::kScale) m.params()[l.param_offset()] = c.flow.init_scale;
  }
  return m;
}

/// Target samples: exact where possible, otherwise the Metropolis fixture generator.
[[nodiscard]] inline RealMatrix target_samples(const ExperimentConfig& c, const TargetEnergy& target, std::size_t n,
                                               std::uint64_t stream) {
  if (n == 0) return RealMatrix(0, target.dim());
  Rng rng = make_rng(c.seed, stream);
  if (target.has_exact_sampler()) return target.sample_exact(n, rng);
  if (c.target.kind == "phi4") {
    MetropolisOptions opt{c.data.metropolis.burn_in, c.data.metropolis.thinning, c.data.metropolis.step};
    return phi4_metropolis_samples(Phi4Params{c.target.rows, c.target.cols, c.target.mass_squared, c.target.coupling},
                                   n, rng, opt);
  }
  throw ConfigError("target has no sampler");
}

[[nodiscard]] inline TrainData build_data(const ExperimentConfig& c, const TargetEnergy& target) {
  TrainData d;
  d.train = target_samples(c, target, c.data.train_samples, 10);
  d.test = target_samples(c, target, c.data.test_samples, 11);
  d.reference = target_samples(c, target, c.data.reference_samples, 12);
  return d;
}

/// Training settings with the seed and bisection options of the experiment applied.
[[nodiscard]] inline TrainConfig effective_train_config(const ExperimentConfig& c) {
  TrainConfig t = c.train;
  t.seed = c.seed;
  t.estimator_options.inverse.bisection = c.bisection;
  return t;
}

}  // namespace pathflow

#endif
