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


#ifndef PATHFLOW_GRADCHECK_HPP
#define PATHFLOW_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include <pathflow/estimators.hpp>
#include <pathflow/flows/flow.hpp>
#include <pathflow/flows/flow_target.hpp>
#include <pathflow/flows/model.hpp>
#include <pathflow/numerics/finite_difference.hpp>
#include <pathflow/random.hpp>
#include <pathflow/recursion.hpp>
#include <pathflow/targets/gmm.hpp>

/**
 * \file
 * \brief Oracle suites for the recursion and the estimators.
 *
 * Suites: finite_difference, coupling_recursion, cross_estimator and
 * sticking_the_landing. Each check reports the worst error over all random flows
 * and samples. A tolerance override replaces every upper-bound tolerance; lower
 * bounds (nonzero standard-estimator norms) are not tolerances and keep their value.
 */

namespace pathflow {

struct RandomFlowOptions {
  std::size_t min_layers = 2;
  std::size_t max_layers = 8;
  bool allow_implicit = true;
  std::vector<std::size_t> hidden = {16, 16};
  std::size_t mixture_size = 3;
  double output_scale = 0.3;
  double scale_layer_probability = 0.3;
};

/// A randomly structured flow with random parameters. Masks are random subsets.
[[nodiscard]] inline FlowModel random_flow(Rng& rng, std::size_t dim, const RandomFlowOptions& o = {}) {
  if (dim < 2) throw ConfigError("random flows need dim >= 2");
  if (o.min_layers == 0 || o.max_layers < o.min_layers) throw ConfigError("invalid random flow layer range");
  FlowArchitecture a;
  a.dim = dim;
  a.base = BaseDensity::standard_normal(dim);
  const std::size_t layers = std::uniform_int_distribution<std::size_t>(o.min_layers, o.max_layers)(rng);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t l = 0; l < layers; ++l) {
    LayerSpec s;
    s.kind = o.allow_implicit && coin(rng) ? LayerKind::kLogisticMixture : LayerKind::kAffine;
    std::vector<std::uint32_t> perm(dim);
    std::iota(perm.begin(), perm.end(), 0u);
    std::shuffle(perm.begin(), perm.end(), rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, dim - 1)(rng);
    s.trans.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(s.trans.begin(), s.trans.end());
    s.hidden = o.hidden;
    s.activation = coin(rng) ? Activation::kTanh : Activation::kRelu;
    s.weight_norm = coin(rng);
    s.mixture_size = o.mixture_size;
    a.layers.push_back(std::move(s));
  }
  if (std::bernoulli_distribution(o.scale_layer_probability)(rng)) {
    LayerSpec s;
    s.kind = LayerKind::kScale;
    a.layers.push_back(std::move(s));
  }
  FlowModel m(std::move(a));
  m.randomize(rng, o.output_scale);
  return m;
}

enum class CheckKind { kUpperBound, kLowerBound };

struct CheckResult {
  std::string name;
  double worst = 0.0;  ///< largest error (upper bound) or smallest value (lower bound)
  double tolerance = 0.0;
  CheckKind kind = CheckKind::kUpperBound;
  std::size_t evaluations = 0;

  [[nodiscard]] bool passed() const {
    if (evaluations == 0) return true;
    return kind == CheckKind::kUpperBound ? worst <= tolerance : worst > tolerance;
  }

  void observe(double v) {
    if (evaluations == 0) {
      worst = v;
    } else if (kind == CheckKind::kUpperBound) {
      worst = std::isnan(v) || v > worst ? v : worst;
    } else {
      worst = std::isnan(v) || v < worst ? v : worst;
    }
    ++evaluations;
  }
};

struct SuiteResult {
  std::string name;
  std::vector<CheckResult> checks;

  [[nodiscard]] bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed(); });
  }
  [[nodiscard]] const CheckResult* find(const std::string& n) const {
    for (const auto& c : checks) {
      if (c.name == n) return &c;
    }
    return nullptr;
  }
};

struct GradcheckReport {
  std::uint64_t seed = 0;
  std::vector<SuiteResult> suites;

  [[nodiscard]] bool passed() const {
    return std::all_of(suites.begin(), suites.end(), [](const auto& s) { return s.passed(); });
  }
  [[nodiscard]] const SuiteResult* find(const std::string& n) const {
    for (const auto& s : suites) {
      if (s.name == n) return &s;
    }
    return nullptr;
  }
};

struct GradcheckOptions {
  std::uint64_t seed = 1;
  std::size_t flows = 12;
  std::vector<std::size_t> dims = {2, 5, 8};
  std::size_t batch = 32;
  double tolerance_override = 0.0;  ///< > 0 replaces every upper-bound tolerance
  bool corrupt_recursion = false;
  double fd_step = 1e-5;
  RandomFlowOptions flow{2, 5};
};

namespace detail {

struct Tolerances {
  double fd = 1e-6;
  double recursion_explicit = 1e-10;
  double recursion_implicit = 1e-7;
  double dense = 1e-9;
  double affine = 1e-12;
  double identity_explicit = 1e-8;
  double identity_implicit = 1e-7;
  double stl = 1e-10;
  double std_norm_floor = 1e-3;
};

inline CheckResult& check(SuiteResult& s, const std::string& name, double tol, double override_tol,
                          CheckKind kind = CheckKind::kUpperBound) {
  for (auto& c : s.checks) {
    if (c.name == name) return c;
  }
  CheckResult c;
  c.name = name;
  c.kind = kind;
  c.tolerance = kind == CheckKind::kUpperBound && override_tol > 0.0 ? override_tol : tol;
  s.checks.push_back(c);
  return s.checks.back();
}

inline RealVector inverse_tape_gradient(const FlowModel& model, std::span<const double> x, const InverseOptions& inv) {
  Tape tape(model.params());
  const FlowTrace t = record_inverse(model, tape, x, inv);
  RealVector adj(tape.value_count(), 0.0);
  tape.adjoint_of(std::span<double>(adj), t.log_q)[0] = 1.0;
  tape.backward(adj, {});
  auto g = tape.adjoint_of(std::span<const double>(adj), t.input);
  return {g.begin(), g.end()};
}

/// G through the dense coupling formula, layer by layer; also checks the
/// general-diffeomorphism formula and the affine specialization on every layer.
inline RealVector dense_recursion(const FlowModel& model, std::span<const double> x0, CheckResult& general,
                                  CheckResult& affine) {
  const std::size_t d = model.dim();
  RealVector x(x0.begin(), x0.end());
  RealVector g(d);
  model.base().log_density_gradient(x, g);
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    const CouplingLayer& layer = model.layers()[l];
    Tape tape(model.params());
    const LayerRecord r = record_layer_forward(model, l, tape, tape.input(x));
    RealVector next(tape.value(r.output).begin(), tape.value(r.output).end());
    if (layer.kind() == LayerKind::kScale) {
      for (std::size_t i = 0; i < d; ++i) g[i] /= r.diag[i];
      x = std::move(next);
      continue;
    }
    const CouplingQuantities q = coupling_quantities(model, l, x);
    const RecursionState s = split_gradient(g, layer.trans(), layer.cond());
    const RealVector coupled = recursion_step_coupling(s, q, l).full();

    // Full Jacobian J(i, j) = dy_j / dx_i and dL/dx from the blocks.
    RealMatrix jac(d, d);
    RealVector dl(d, 0.0);
    const auto trans = layer.trans();
    const auto cond = layer.cond();
    for (auto j : cond) jac(j, j) = 1.0;
    for (std::size_t i = 0; i < trans.size(); ++i) {
      jac(trans[i], trans[i]) = q.diag[i];
      dl[trans[i]] = q.dlogdet_dtrans[i];
      for (std::size_t j = 0; j < cond.size(); ++j) jac(cond[j], trans[i]) = q.df_dcond(i, j);
    }
    for (std::size_t j = 0; j < cond.size(); ++j) dl[cond[j]] = q.dlogdet_dcond[j];
    // general_recursion_reference wants row i = dy_i/dx; transpose.
    RealMatrix jt(d, d);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) jt(i, j) = jac(j, i);
    }
    general.observe(relative_error(general_recursion_reference(g, jt, dl), coupled));

    if (layer.kind() == LayerKind::kAffine) {
      const AffineQuantities a = affine_quantities(model, l, x);
      const RealVector viaaffine =
          recursion_step_affine(s, a.sigma, a.dsigma_dcond, a.dmu_dcond, a.x_trans, l).full();
      affine.observe(relative_error(viaaffine, coupled));
    }
    g = coupled;
    x = std::move(next);
  }
  return g;
}

/// Mean over rows of a per-row objective with the model's parameters replaced by theta.
template <class F>
double mean_objective(const FlowModel& model, std::span<const double> theta, const RealMatrix& rows, F&& f) {
  FlowModel m = model;
  m.set_params(theta);
  double s = 0.0;
  for (std::size_t n = 0; n < rows.rows(); ++n) s += f(m, rows.row(n));
  return s / static_cast<double>(rows.rows());
}

inline RealMatrix head_rows(const RealMatrix& m, std::size_t n) {
  n = std::min(n, m.rows());
  RealMatrix out(n, m.cols());
  for (std::size_t i = 0; i < n; ++i) std::copy(m.row(i).begin(), m.row(i).end(), out.row(i).begin());
  return out;
}

}  // namespace detail

/// Runs all four suites on opt.flows random flows.
[[nodiscard]] inline GradcheckReport run_gradcheck(const GradcheckOptions& opt) {
  if (opt.flows == 0 || opt.dims.empty() || opt.batch < 2) throw ConfigError("gradcheck needs flows, dims and batch >= 2");
  const detail::Tolerances tol;
  const double ov = opt.tolerance_override;
  GradcheckReport rep;
  rep.seed = opt.seed;
  SuiteResult fd{"finite_difference", {}};
  SuiteResult rec{"coupling_recursion", {}};
  SuiteResult cross{"cross_estimator", {}};
  SuiteResult stl{"sticking_the_landing", {}};

  EstimatorOptions eo;
  eo.recursion.corrupt = opt.corrupt_recursion;
  const InverseOptions& inv = eo.inverse;
  Rng rng = make_rng(opt.seed, 30);

  for (std::size_t f = 0; f < opt.flows; ++f) {
    const std::size_t d = opt.dims[f % opt.dims.size()];
    const FlowModel model = random_flow(rng, d, opt.flow);
    const bool implicit = model.has_implicit_layers();
    const GmmTarget gmm(GmmParams{d, 0.5});
    const RealMatrix x0 = model.base().sample(opt.batch, rng);
    const RealMatrix data = gmm.sample_exact(opt.batch, rng);

    // coupling_recursion
    const AugmentedBatch fast = forward_with_G(model, x0, eo.recursion);
    auto& vs_tape = detail::check(rec, implicit ? "fast_G_vs_inverse_tape_implicit" : "fast_G_vs_inverse_tape_explicit",
                                  implicit ? tol.recursion_implicit : tol.recursion_explicit, ov);
    for (std::size_t n = 0; n < x0.rows(); ++n) {
      vs_tape.observe(relative_error(fast.G.row(n), detail::inverse_tape_gradient(model, fast.x.row(n), inv)));
    }
    if (d <= kDenseReferenceLimit) {
      auto& dense = detail::check(rec, "fast_G_vs_dense_coupling", tol.dense, ov);
      auto& general = detail::check(rec, "coupling_vs_general_formula", tol.dense, ov);
      auto& affine = detail::check(rec, "affine_vs_coupling_step", tol.affine, ov);
      for (std::size_t n = 0; n < std::min<std::size_t>(x0.rows(), 4); ++n) {
        dense.observe(relative_error(fast.G.row(n), detail::dense_recursion(model, x0.row(n), general, affine)));
      }
    }

    // finite_difference
    auto& fd_g = detail::check(fd, "G_vs_fd_log_density", tol.fd, ov);
    for (std::size_t n = 0; n < std::min<std::size_t>(x0.rows(), 3); ++n) {
      const RealVector num = finite_difference_gradient(
          [&](std::span<const double> x) { return flow_inverse_logq(model, x, inv); }, fast.x.row(n), opt.fd_step);
      fd_g.observe(relative_error(fast.G.row(n), num));
    }
    {
      std::vector<std::size_t> coords(model.param_count());
      std::iota(coords.begin(), coords.end(), std::size_t{0});
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(std::min<std::size_t>(coords.size(), 8));
      const RealMatrix few_x0 = detail::head_rows(x0, 4);
      const RealMatrix few_data = detail::head_rows(data, 4);
      const GradEstimate mle = grad_forward_mle(model, few_data, eo);
      const GradEstimate rstd = grad_reverse_standard(model, gmm, few_x0, eo);
      RealVector theta(model.params().begin(), model.params().end());
      auto fd_coords = [&](auto&& objective) {
        RealVector out;
        for (auto c : coords) {
          const double orig = theta[c];
          theta[c] = orig + opt.fd_step;
          const double fp = objective(theta);
          theta[c] = orig - opt.fd_step;
          const double fm = objective(theta);
          theta[c] = orig;
          out.push_back((fp - fm) / (2.0 * opt.fd_step));
        }
        return out;
      };
      auto pick = [&](const RealVector& g) {
        RealVector out;
        for (auto c : coords) out.push_back(g[c]);
        return out;
      };
      const RealVector num_mle = fd_coords([&](const RealVector& th) {
        return detail::mean_objective(model, th, few_data, [&](const FlowModel& m, std::span<const double> x) {
          return -flow_inverse_logq(m, x, inv);
        });
      });
      detail::check(fd, "fwd_mle_vs_fd", tol.fd, ov).observe(relative_error(pick(mle.grad), num_mle));
      const RealVector num_rev = fd_coords([&](const RealVector& th) {
        return detail::mean_objective(model, th, few_x0, [&](const FlowModel& m, std::span<const double> z) {
          Tape tape(m.params());
          const FlowTrace t = record_forward(m, tape, z);
          return gmm.energy(tape.value(t.output)) + tape.value(t.log_q)[0];
        });
      });
      detail::check(fd, "rev_std_vs_fd", tol.fd, ov).observe(relative_error(pick(rstd.grad), num_rev));
    }

    // cross_estimator
    {
      const GradEstimate a = grad_reverse_path_fast(model, gmm, x0, eo);
      const GradEstimate b = grad_reverse_path_baseline(model, gmm, x0, eo);
      detail::check(cross, implicit ? "rev_fast_vs_baseline_implicit" : "rev_fast_vs_baseline_explicit",
                    implicit ? tol.identity_implicit : tol.identity_explicit, ov)
          .observe(relative_error(a.grad, b.grad));
      const GradEstimate s = grad_reverse_standard(model, gmm, x0, eo);
      const ScoreStatistics score = score_expectation(model, x0, eo);
      RealVector sum(a.grad.size());
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = b.grad[i] + score.mean[i];
      detail::check(cross, "rev_std_vs_path_plus_score", implicit ? tol.identity_implicit : tol.identity_explicit, ov)
          .observe(relative_error(s.grad, sum));
      const GradEstimate c = grad_forward_path(model, gmm, data, eo);
      const GradEstimate e = grad_forward_gdreg(model, gmm, data, eo);
      detail::check(cross, implicit ? "fwd_path_vs_gdreg_implicit" : "fwd_path_vs_gdreg_explicit",
                    implicit ? tol.identity_implicit : tol.identity_explicit, ov)
          .observe(relative_error(c.grad, e.grad));
    }

    // sticking_the_landing: exact fit against the flow's own density (explicit flows),
    // and the identity flow against the base density (all layer kinds).
    {
      FlowModel exact = model;
      bool exact_explicit = !implicit;
      if (implicit) {
        Rng init = make_rng(opt.seed, 31 + f);
        exact.initialize_identity(init);
        for (const auto& l : exact.layers()) {
          if (l.kind() == LayerKind::kScale) exact.params()[l.param_offset()] = 1.0;
        }
      }
      std::unique_ptr<TargetEnergy> target;
      if (exact_explicit) {
        target = std::make_unique<FlowTarget>(exact, inv);
      } else {
        target = std::make_unique<BaseSelfTarget>(exact.base());
      }
      const RealMatrix samples = target->sample_exact(opt.batch, rng);
      const GradEstimate rp = grad_reverse_path_fast(exact, *target, x0, eo);
      const GradEstimate fp = grad_forward_path(exact, *target, samples, eo);
      detail::check(stl, "rev_path_fast_norm", tol.stl, ov).observe(rp.per_sample_norm_mean);
      detail::check(stl, "fwd_path_norm", tol.stl, ov).observe(fp.per_sample_norm_mean);
      const GradEstimate rs = grad_reverse_standard(exact, *target, x0, eo);
      const GradEstimate fm = grad_forward_mle(exact, samples, eo);
      detail::check(stl, "rev_std_norm_floor", tol.std_norm_floor, ov, CheckKind::kLowerBound)
          .observe(rs.per_sample_norm_mean);
      detail::check(stl, "fwd_mle_norm_floor", tol.std_norm_floor, ov, CheckKind::kLowerBound)
          .observe(fm.per_sample_norm_mean);
    }
  }
  rep.suites = {std::move(fd), std::move(rec), std::move(cross), std::move(stl)};
  return rep;
}

[[nodiscard]] inline nlohmann::json gradcheck_to_json(const GradcheckReport& r) {
  nlohmann::json suites = nlohmann::json::array();
  for (const auto& s : r.suites) {
    nlohmann::json checks = nlohmann::json::array();
    double worst_rel = 0.0;
    for (const auto& c : s.checks) {
      checks.push_back({{"name", c.name},
                        {"kind", c.kind == CheckKind::kUpperBound ? "max_error" : "min_value"},
                        {"worst", std::isfinite(c.worst) ? nlohmann::json(c.worst) : nlohmann::json(nullptr)},
                        {"tolerance", c.tolerance},
                        {"evaluations", c.evaluations},
                        {"passed", c.passed()}});
      if (c.kind == CheckKind::kUpperBound) worst_rel = std::max(worst_rel, c.worst);
    }
    suites.push_back({{"name", s.name}, {"passed", s.passed()}, {"worst_error", worst_rel}, {"checks", checks}});
  }
  return {{"format", "pathflow-gradcheck"}, {"version", 1}, {"seed", r.seed}, {"passed", r.passed()},
          {"suites", suites}};
}

}  // namespace pathflow

#endif
