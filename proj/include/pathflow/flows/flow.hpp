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


#ifndef PATHFLOW_FLOWS_FLOW_HPP
#define PATHFLOW_FLOWS_FLOW_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <tuple>
#include <vector>

#include <pathflow/error.hpp>
#include <pathflow/flows/mixture.hpp>
#include <pathflow/flows/model.hpp>
#include <pathflow/numerics/dense.hpp>
#include <pathflow/numerics/mlp.hpp>
#include <pathflow/numerics/tape.hpp>
#include <pathflow/parallel.hpp>

/**
 * \file
 * \brief Recording flows on a tape, in both directions.
 *
 * Each layer is recorded as
 *
 *   gathers (cond, trans) | conditioner | head (out_trans, logdet) | merge
 *
 * and the node and value ranges of the middle two blocks are kept in a
 * LayerRecord. Because the tape arena is contiguous, those ranges allow the
 * gradient recursion to run vector-Jacobian products local to a single layer.
 *
 * In the forward direction logdet = log|det dx_{l+1}/dx_l|. In the inverse
 * direction logdet = log|det dx_l/dx_{l+1}|. Either way a layer maps densities as
 * log q_out(out) = log q_in(in) - logdet.
 */

namespace pathflow {

struct LayerRecord {
  std::size_t layer = 0;
  LayerKind kind = LayerKind::kAffine;
  bool inverse = false;
  Var input, cond, trans, out_trans, logdet, output;
  std::size_t value_begin = 0;  ///< first value slot written by the layer
  std::size_t value_end = 0;    ///< one past the last slot before the merge
  std::size_t node_begin = 0;   ///< first node after the gathers
  std::size_t head_begin = 0;   ///< first node after the conditioner
  std::size_t node_end = 0;     ///< one past the last node before the merge
  RealVector diag;              ///< d out_trans / d trans
};

struct FlowTrace {
  Var input;
  Var output;
  Var log_q;  ///< log density of the flow model at the x-space end of the pass
  std::vector<LayerRecord> layers;
};

struct InverseOptions {
  BisectionOptions bisection{};
  /// Records every bisection iteration on the tape instead of the implicit-function
  /// form. Its parameter gradient is not meaningful; it exists to time the cost of
  /// differentiating through the solver.
  bool differentiate_bisection = false;
};

namespace detail {

inline void check_finite(const Tape& tape, Var v, std::size_t layer, const char* what) {
  if (!all_finite(tape.value(v))) throw NumericError(static_cast<std::ptrdiff_t>(layer), what);
}

struct MixtureCoeffs {
  Var log_weights, locations, log_scales, inv_scales;
};

inline MixtureCoeffs record_mixture_coeffs(const CouplingLayer& l, Tape& tape, Var h) {
  const std::size_t K = l.mixture_size();
  MixtureCoeffs c;
  const Var logits = tape.gather(h, l.head_part(0));
  c.locations = tape.gather(h, l.head_part(1));
  c.log_scales = tape.clamp(tape.gather(h, l.head_part(2)), -kLogScaleBound, kLogScaleBound);
  const Var norm = tape.segment_log_sum_exp(logits, K);
  c.log_weights = tape.sub(logits, tape.gather(norm, l.expand()));
  c.inv_scales = tape.exp(tape.neg(c.log_scales));
  return c;
}

struct MixtureVars {
  Var tau, log_dtau;
};

inline MixtureVars record_mixture_eval(const CouplingLayer& l, Tape& tape, const MixtureCoeffs& c, Var x,
                                       bool want_derivative) {
  const std::size_t K = l.mixture_size();
  const Var z = tape.mul(tape.sub(tape.gather(x, l.expand()), c.locations), c.inv_scales);
  const Var lz = tape.log_sigmoid(z);
  const Var lnz = tape.log_sigmoid(tape.neg(z));
  const Var wa = tape.add(c.log_weights, lz);
  const Var wb = tape.add(c.log_weights, lnz);
  const Var a = tape.segment_log_sum_exp(wa, K);
  const Var b = tape.segment_log_sum_exp(wb, K);
  MixtureVars out;
  out.tau = tape.sub(a, b);
  if (want_derivative) {
    const Var wc = tape.sub(tape.add(wa, lnz), c.log_scales);
    out.log_dtau = tape.sub(tape.segment_log_sum_exp(wc, K), tape.add(a, b));
  }
  return out;
}

inline void begin_coupling(const CouplingLayer& l, Tape& tape, Var in, LayerRecord& r) {
  r.input = in;
  r.value_begin = tape.value_count();
  r.cond = tape.gather(in, l.cond());
  r.trans = tape.gather(in, l.trans());
  r.node_begin = tape.node_count();
}

inline Var run_conditioner(const CouplingLayer& l, Tape& tape, LayerRecord& r) {
  const Var h = mlp_forward(l.conditioner(), l.param_offset(), r.cond, tape);
  check_finite(tape, h, r.layer, "non-finite conditioner output");
  r.head_begin = tape.node_count();
  return h;
}

inline void end_layer(const CouplingLayer& l, Tape& tape, LayerRecord& r) {
  r.node_end = tape.node_count();
  r.value_end = tape.value_count();
  check_finite(tape, r.out_trans, r.layer, "non-finite layer output");
  check_finite(tape, r.logdet, r.layer, "non-finite log-determinant");
  if (l.kind() == LayerKind::kScale) {
    r.output = r.out_trans;
  } else {
    r.output = tape.scatter(r.out_trans, l.trans(), r.cond, l.cond(), l.dim());
  }
}

}  // namespace detail

/// Records layer `index` of `model` mapping x_l to x_{l+1}.
inline LayerRecord record_layer_forward(const FlowModel& model, std::size_t index, Tape& tape, Var x) {
  const CouplingLayer& l = model.layers().at(index);
  LayerRecord r;
  r.layer = index;
  r.kind = l.kind();
  if (l.kind() == LayerKind::kScale) {
    r.input = x;
    r.trans = x;
    r.value_begin = tape.value_count();
    r.node_begin = tape.node_count();
    const Var s = tape.param(l.param_offset(), 1);
    r.head_begin = tape.node_count();
    r.out_trans = tape.mul(x, tape.gather(s, l.broadcast()));
    r.logdet = tape.scale(tape.log_abs(s), static_cast<double>(l.dim()));
    r.diag.assign(l.dim(), tape.value(s)[0]);
    detail::end_layer(l, tape, r);
    return r;
  }
  detail::begin_coupling(l, tape, x, r);
  const Var h = detail::run_conditioner(l, tape, r);
  const std::size_t k = l.trans().size();
  if (l.kind() == LayerKind::kAffine) {
    const Var s = tape.clamp(tape.gather(h, l.head_part(0)), -kLogScaleBound, kLogScaleBound);
    const Var mu = tape.gather(h, l.head_part(1));
    const Var sigma = tape.exp(s);
    r.out_trans = tape.add(tape.mul(sigma, r.trans), mu);
    r.logdet = tape.sum(s);
    auto sv = tape.value(sigma);
    r.diag.assign(sv.begin(), sv.end());
  } else {
    const auto c = detail::record_mixture_coeffs(l, tape, h);
    const auto m = detail::record_mixture_eval(l, tape, c, r.trans, true);
    r.out_trans = m.tau;
    r.logdet = tape.sum(m.log_dtau);
    r.diag.resize(k);
    auto lv = tape.value(m.log_dtau);
    for (std::size_t i = 0; i < k; ++i) r.diag[i] = std::exp(lv[i]);
  }
  detail::end_layer(l, tape, r);
  return r;
}

/// Records the inverse of layer `index`, mapping x_{l+1} to x_l.
///
/// Implicit layers are solved numerically first. The tape then holds
/// x = x* - (tau(x*) - y) / tau'(x*) with x* and 1/tau'(x*) as constants, whose
/// derivatives are those of the exact inverse by the implicit function theorem.
inline LayerRecord record_layer_inverse(const FlowModel& model, std::size_t index, Tape& tape, Var y,
                                        const InverseOptions& opt = {}) {
  const CouplingLayer& l = model.layers().at(index);
  LayerRecord r;
  r.layer = index;
  r.kind = l.kind();
  r.inverse = true;
  if (l.kind() == LayerKind::kScale) {
    r.input = y;
    r.trans = y;
    r.value_begin = tape.value_count();
    r.node_begin = tape.node_count();
    const Var s = tape.param(l.param_offset(), 1);
    r.head_begin = tape.node_count();
    r.out_trans = tape.div(y, tape.gather(s, l.broadcast()));
    r.logdet = tape.scale(tape.log_abs(s), -static_cast<double>(l.dim()));
    r.diag.assign(l.dim(), 1.0 / tape.value(s)[0]);
    detail::end_layer(l, tape, r);
    return r;
  }
  detail::begin_coupling(l, tape, y, r);
  const Var h = detail::run_conditioner(l, tape, r);
  const std::size_t k = l.trans().size();
  if (l.kind() == LayerKind::kAffine) {
    const Var s = tape.clamp(tape.gather(h, l.head_part(0)), -kLogScaleBound, kLogScaleBound);
    const Var mu = tape.gather(h, l.head_part(1));
    const Var inv_sigma = tape.exp(tape.neg(s));
    r.out_trans = tape.mul(tape.sub(r.trans, mu), inv_sigma);
    r.logdet = tape.neg(tape.sum(s));
    auto iv = tape.value(inv_sigma);
    r.diag.assign(iv.begin(), iv.end());
    detail::end_layer(l, tape, r);
    return r;
  }

  const auto coeffs = detail::record_mixture_coeffs(l, tape, h);
  const MixtureParams mp = MixtureParams::from_head(tape.value(h), k, l.mixture_size());
  const RealVector target(tape.value(r.trans).begin(), tape.value(r.trans).end());
  RealVector sol(k);
  for (std::size_t i = 0; i < k; ++i) sol[i] = mixture_bisect(mp, i, target[i], opt.bisection, l.trans()[i]);

  Var xt;
  if (!opt.differentiate_bisection) {
    RealVector inv_d(k);
    for (std::size_t i = 0; i < k; ++i) inv_d[i] = std::exp(-mixture_value(mp, i, sol[i]).log_dtau);
    const Var xs = tape.constant(sol);
    const Var resid = tape.sub(detail::record_mixture_eval(l, tape, coeffs, xs, false).tau, r.trans);
    xt = tape.sub(xs, tape.mul(resid, tape.constant(inv_d)));
    r.diag = std::move(inv_d);
  } else {
    // Replays the bisection on the tape with a shared iteration count for all coordinates.
    RealVector lo(k), hi(k);
    for (std::size_t i = 0; i < k; ++i) {
      std::tie(lo[i], hi[i]) = mixture_straddle(mp, i, target[i], opt.bisection, l.trans()[i]);
    }
    std::size_t iters = 0;
    for (std::size_t i = 0; i < k; ++i) {
      double a = lo[i], b = hi[i];
      std::size_t n = 0;
      while (b - a > 2.0 * opt.bisection.tol && n < opt.bisection.max_iterations) {
        const double m = 0.5 * (a + b);
        if (m <= a || m >= b) break;
        (mixture_tau(mp, i, m) < target[i] ? a : b) = m;
        ++n;
      }
      iters = std::max(iters, n);
    }
    Var vlo = tape.constant(lo);
    Var vhi = tape.constant(hi);
    Var mid = tape.scale(tape.add(vlo, vhi), 0.5);
    RealVector mask(k), comp(k);
    for (std::size_t it = 0; it < iters; ++it) {
      const Var t = detail::record_mixture_eval(l, tape, coeffs, mid, false).tau;
      const auto tv = tape.value(t);
      for (std::size_t i = 0; i < k; ++i) {
        mask[i] = tv[i] < target[i] ? 1.0 : 0.0;
        comp[i] = 1.0 - mask[i];
      }
      vlo = tape.add(vlo, tape.mul(tape.constant(mask), tape.sub(mid, vlo)));
      vhi = tape.add(vhi, tape.mul(tape.constant(comp), tape.sub(mid, vhi)));
      mid = tape.scale(tape.add(vlo, vhi), 0.5);
    }
    xt = mid;
    r.diag.resize(k);
    auto xv = tape.value(xt);
    for (std::size_t i = 0; i < k; ++i) r.diag[i] = std::exp(-mixture_value(mp, i, xv[i]).log_dtau);
  }
  r.out_trans = xt;
  r.logdet = tape.neg(tape.sum(detail::record_mixture_eval(l, tape, coeffs, xt, true).log_dtau));
  detail::end_layer(l, tape, r);
  return r;
}

/// Records the whole flow from base samples x0 to x. `on_layer(record)` runs after
/// every layer, before the next one is recorded.
///
/// The tape must have been reset over model.params().
template <class OnLayer>
FlowTrace record_forward(const FlowModel& model, Tape& tape, std::span<const double> x0, OnLayer&& on_layer) {
  if (x0.size() != model.dim()) throw ConfigError("sample dimension differs from flow dimension");
  FlowTrace t;
  const double base_lq = model.base().log_density(x0);
  t.input = tape.input(x0);
  Var x = t.input;
  Var total;
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    t.layers.push_back(record_layer_forward(model, l, tape, x));
    const LayerRecord& r = t.layers.back();
    on_layer(r);
    x = r.output;
    total = total.valid() ? tape.add(total, r.logdet) : r.logdet;
  }
  t.output = x;
  const double c[1] = {base_lq};
  const Var base = tape.constant(c);
  t.log_q = total.valid() ? tape.sub(base, total) : base;
  return t;
}

inline FlowTrace record_forward(const FlowModel& model, Tape& tape, std::span<const double> x0) {
  return record_forward(model, tape, x0, [](const LayerRecord&) {});
}

/// Records log q0 of a base-space variable.
inline Var record_base_log_density(const BaseDensity& base, Tape& tape, Var x0) {
  const double lq = base.log_density(tape.value(x0));  // also validates the support
  if (base.kind == BaseDensity::Kind::kUniform) {
    const double c[1] = {lq};
    return tape.constant(c);
  }
  const double c[1] = {-0.5 * static_cast<double>(base.dim) * std::log(2.0 * std::numbers::pi)};
  return tape.add(tape.constant(c), tape.scale(tape.sum(tape.mul(x0, x0)), -0.5));
}

/// Records the inverse flow from x back to x0, with log q(x) = log q0(x0) + sum of inverse log-determinants.
template <class OnLayer>
FlowTrace record_inverse(const FlowModel& model, Tape& tape, std::span<const double> x, const InverseOptions& opt,
                         OnLayer&& on_layer) {
  if (x.size() != model.dim()) throw ConfigError("sample dimension differs from flow dimension");
  FlowTrace t;
  t.input = tape.input(x);
  Var y = t.input;
  Var total;
  for (std::size_t l = model.layer_count(); l-- > 0;) {
    t.layers.push_back(record_layer_inverse(model, l, tape, y, opt));
    const LayerRecord& r = t.layers.back();
    on_layer(r);
    y = r.output;
    total = total.valid() ? tape.add(total, r.logdet) : r.logdet;
  }
  t.output = y;
  const Var base = record_base_log_density(model.base(), tape, y);
  t.log_q = total.valid() ? tape.add(base, total) : base;
  return t;
}

inline FlowTrace record_inverse(const FlowModel& model, Tape& tape, std::span<const double> x,
                                const InverseOptions& opt = {}) {
  return record_inverse(model, tape, x, opt, [](const LayerRecord&) {});
}

// --- batch evaluation --------------------------------------------------------

struct FlowBatch {
  RealMatrix x;      ///< samples at the far end of the pass
  RealVector log_q;  ///< model log density of the x-space samples
};

/// Pushes base samples through the flow: x = T(x0), log q(x) = log q0(x0) - sum_l logdet_l.
[[nodiscard]] inline FlowBatch flow_forward(const FlowModel& model, const RealMatrix& x0) {
  if (x0.cols() != model.dim()) throw ConfigError("batch dimension differs from flow dimension");
  FlowBatch out{RealMatrix(x0.rows(), model.dim()), RealVector(x0.rows())};
  parallel_for(x0.rows(), [&](std::size_t begin, std::size_t end) {
    Tape tape(model.params());
    for (std::size_t n = begin; n < end; ++n) {
      tape.reset(model.params());
      const FlowTrace t = record_forward(model, tape, x0.row(n));
      auto xv = tape.value(t.output);
      std::copy(xv.begin(), xv.end(), out.x.row(n).begin());
      out.log_q[n] = tape.value(t.log_q)[0];
    }
  });
  return out;
}

/// Pulls samples back to base space. The returned x holds x0 = T^-1(x); log_q is the
/// model density at the given x.
[[nodiscard]] inline FlowBatch flow_inverse_logq(const FlowModel& model, const RealMatrix& x,
                                                 const InverseOptions& opt = {}) {
  if (x.cols() != model.dim()) throw ConfigError("batch dimension differs from flow dimension");
  FlowBatch out{RealMatrix(x.rows(), model.dim()), RealVector(x.rows())};
  parallel_for(x.rows(), [&](std::size_t begin, std::size_t end) {
    Tape tape(model.params());
    for (std::size_t n = begin; n < end; ++n) {
      tape.reset(model.params());
      const FlowTrace t = record_inverse(model, tape, x.row(n), opt);
      auto xv = tape.value(t.output);
      std::copy(xv.begin(), xv.end(), out.x.row(n).begin());
      out.log_q[n] = tape.value(t.log_q)[0];
    }
  });
  return out;
}

/// Per-sample log q(x) via the inverse pass.
[[nodiscard]] inline double flow_inverse_logq(const FlowModel& model, std::span<const double> x,
                                              const InverseOptions& opt = {}) {
  Tape tape(model.params());
  const FlowTrace t = record_inverse(model, tape, x, opt);
  return tape.value(t.log_q)[0];
}

// --- single layers -----------------------------------------------------------

struct LayerResult {
  RealVector x;
  double logdet = 0.0;
  RealVector diag;  ///< sigma for affine layers, tau' (forward) or 1/tau' (inverse) for mixtures
};

namespace detail {

inline LayerResult run_layer(const FlowModel& model, std::size_t index, std::span<const double> x, LayerKind want,
                             bool inverse, const InverseOptions& opt) {
  if (model.layers().at(index).kind() != want) throw ConfigError("layer has a different kind");
  if (x.size() != model.dim()) throw ConfigError("sample dimension differs from flow dimension");
  Tape tape(model.params());
  const Var in = tape.input(x);
  const LayerRecord r =
      inverse ? record_layer_inverse(model, index, tape, in, opt) : record_layer_forward(model, index, tape, in);
  auto xv = tape.value(r.output);
  return {RealVector(xv.begin(), xv.end()), tape.value(r.logdet)[0], r.diag};
}

}  // namespace detail

[[nodiscard]] inline LayerResult affine_forward(const FlowModel& model, std::size_t layer, std::span<const double> x) {
  return detail::run_layer(model, layer, x, LayerKind::kAffine, false, {});
}
[[nodiscard]] inline LayerResult affine_inverse(const FlowModel& model, std::size_t layer, std::span<const double> y) {
  return detail::run_layer(model, layer, y, LayerKind::kAffine, true, {});
}
[[nodiscard]] inline LayerResult logistic_mixture_forward(const FlowModel& model, std::size_t layer,
                                                          std::span<const double> x) {
  return detail::run_layer(model, layer, x, LayerKind::kLogisticMixture, false, {});
}
[[nodiscard]] inline LayerResult logistic_mixture_inverse(const FlowModel& model, std::size_t layer,
                                                          std::span<const double> y, double tol) {
  InverseOptions opt;
  opt.bisection.tol = tol;
  return detail::run_layer(model, layer, y, LayerKind::kLogisticMixture, true, opt);
}

}  // namespace pathflow

#endif
