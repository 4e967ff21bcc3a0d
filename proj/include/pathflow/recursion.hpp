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


#ifndef PATHFLOW_RECURSION_HPP
#define PATHFLOW_RECURSION_HPP

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <pathflow/error.hpp>
#include <pathflow/flows/flow.hpp>
#include <pathflow/flows/model.hpp>
#include <pathflow/numerics/dense.hpp>
#include <pathflow/numerics/mlp.hpp>
#include <pathflow/numerics/tape.hpp>
#include <pathflow/parallel.hpp>
#include <pathflow/targets/base_density.hpp>
#include <pathflow/targets/target.hpp>

/**
 * \file
 * \brief Row gradients G = d log q(x) / dx carried through a coupling flow.
 *
 * For a coupling layer with out_trans = f(trans; cond), diagonal df/dtrans and
 * log-determinant L,
 *
 *   G_trans' = (G_trans - dL/dtrans) / diag
 *   G_cond'  = G_cond - G_trans' df/dcond - dL/dcond
 *
 * The production path obtains the last two terms from one vector-Jacobian product
 * over the layer's own tape range (two for implicit layers, whose L depends on
 * trans). The dense functions in this header are reference implementations.
 */

namespace pathflow {

/// Gradient state split by the coordinate partition of the next layer.
struct RecursionState {
  RealVector g_trans;
  RealVector g_cond;
  std::vector<std::uint32_t> trans;
  std::vector<std::uint32_t> cond;

  /// Reassembles the full-length row gradient.
  [[nodiscard]] RealVector full() const {
    RealVector g(trans.size() + cond.size());
    for (std::size_t i = 0; i < trans.size(); ++i) g[trans[i]] = g_trans[i];
    for (std::size_t j = 0; j < cond.size(); ++j) g[cond[j]] = g_cond[j];
    return g;
  }
};

/// Splits a full-length row gradient.
[[nodiscard]] inline RecursionState split_gradient(std::span<const double> g, std::span<const std::uint32_t> trans,
                                                   std::span<const std::uint32_t> cond) {
  if (trans.size() + cond.size() != g.size()) throw ConfigError("split does not cover the gradient");
  RecursionState s;
  s.trans.assign(trans.begin(), trans.end());
  s.cond.assign(cond.begin(), cond.end());
  for (auto i : trans) s.g_trans.push_back(g[i]);
  for (auto j : cond) s.g_cond.push_back(g[j]);
  return s;
}

/// Gradient of log q0 at x0, split.
[[nodiscard]] inline RecursionState recursion_init(const BaseDensity& base, std::span<const double> x0,
                                                   std::span<const std::uint32_t> trans,
                                                   std::span<const std::uint32_t> cond) {
  RealVector g(x0.size());
  base.log_density_gradient(x0, g);
  return split_gradient(g, trans, cond);
}

/// Layer quantities consumed by the dense coupling step.
struct CouplingQuantities {
  RealVector diag;            ///< df_i / dtrans_i, length k
  RealMatrix df_dcond;        ///< k x (d - k)
  RealVector dlogdet_dtrans;  ///< length k
  RealVector dlogdet_dcond;   ///< length d - k
};

/// One step of the coupling recursion from explicit Jacobian blocks.
[[nodiscard]] inline RecursionState recursion_step_coupling(const RecursionState& s, const CouplingQuantities& q,
                                                            std::size_t layer = 0) {
  const std::size_t k = s.g_trans.size();
  const std::size_t m = s.g_cond.size();
  if (q.diag.size() != k || q.dlogdet_dtrans.size() != k || q.dlogdet_dcond.size() != m ||
      q.df_dcond.rows() != k || q.df_dcond.cols() != m) {
    throw ConfigError("coupling quantities do not match the split");
  }
  RecursionState out = s;
  for (std::size_t i = 0; i < k; ++i) {
    if (q.diag[i] == 0.0) throw NumericError(static_cast<std::ptrdiff_t>(layer), "singular coupling Jacobian");
    out.g_trans[i] = (s.g_trans[i] - q.dlogdet_dtrans[i]) / q.diag[i];
  }
  for (std::size_t j = 0; j < m; ++j) {
    double v = s.g_cond[j] - q.dlogdet_dcond[j];
    for (std::size_t i = 0; i < k; ++i) v -= out.g_trans[i] * q.df_dcond(i, j);
    out.g_cond[j] = v;
  }
  return out;
}

/// Affine specialization: out_trans = sigma * x_trans + mu with L = sum log sigma.
///
/// `dsigma_dcond` and `dmu_dcond` are k x (d - k); `x_trans` is the layer input.
[[nodiscard]] inline RecursionState recursion_step_affine(const RecursionState& s, std::span<const double> sigma,
                                                          const RealMatrix& dsigma_dcond, const RealMatrix& dmu_dcond,
                                                          std::span<const double> x_trans, std::size_t layer = 0) {
  const std::size_t k = s.g_trans.size();
  const std::size_t m = s.g_cond.size();
  if (sigma.size() != k || x_trans.size() != k || dsigma_dcond.rows() != k || dsigma_dcond.cols() != m ||
      dmu_dcond.rows() != k || dmu_dcond.cols() != m) {
    throw ConfigError("affine quantities do not match the split");
  }
  RecursionState out = s;
  for (std::size_t i = 0; i < k; ++i) {
    if (sigma[i] == 0.0) throw NumericError(static_cast<std::ptrdiff_t>(layer), "zero affine scale");
    out.g_trans[i] = s.g_trans[i] / sigma[i];
  }
  for (std::size_t j = 0; j < m; ++j) {
    double v = s.g_cond[j];
    for (std::size_t i = 0; i < k; ++i) {
      v -= out.g_trans[i] * (dsigma_dcond(i, j) * x_trans[i] + dmu_dcond(i, j));
      v -= dsigma_dcond(i, j) / sigma[i];
    }
    out.g_cond[j] = v;
  }
  return out;
}

inline constexpr std::size_t kDenseReferenceLimit = 8;

/// Reference recursion for an arbitrary diffeomorphism: G' = (G - dL/dx) J^-1, J = dy/dx (d x d, row i = dy_i/dx).
[[nodiscard]] inline RealVector general_recursion_reference(std::span<const double> g, const RealMatrix& jacobian,
                                                            std::span<const double> dlogdet_dx) {
  if (g.size() > kDenseReferenceLimit) throw ConfigError("dense reference recursion limited to d <= 8");
  RealVector b(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) b[i] = g[i] - dlogdet_dx[i];
  // Row vector times J^-1 solves x J = b.
  return solve_row_system(jacobian, b);
}

// --- tape-derived layer quantities (reference and tests) ----------------------

namespace detail {

inline RealVector adjoint_copy(const Tape& tape, std::span<double> adjoint, Var v) {
  auto a = tape.adjoint_of(std::span<const double>(adjoint), v);
  return {a.begin(), a.end()};
}

}  // namespace detail

/// Explicit Jacobian blocks of a forward coupling layer at x, by per-row tape VJPs.
[[nodiscard]] inline CouplingQuantities coupling_quantities(const FlowModel& model, std::size_t index,
                                                            std::span<const double> x) {
  const CouplingLayer& l = model.layers().at(index);
  if (l.kind() == LayerKind::kScale) throw ConfigError("scale layers have no conditioning set");
  Tape tape(model.params());
  const LayerRecord r = record_layer_forward(model, index, tape, tape.input(x));
  const std::size_t k = l.trans().size();
  const std::size_t m = l.cond().size();
  CouplingQuantities q;
  q.diag = r.diag;
  q.df_dcond = RealMatrix(k, m);
  RealVector adj(tape.value_count(), 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    std::fill(adj.begin(), adj.end(), 0.0);
    tape.adjoint_of(std::span<double>(adj), r.out_trans)[i] = 1.0;
    tape.backward(adj, {}, r.node_begin, r.node_end);
    auto row = tape.adjoint_of(std::span<const double>(adj), r.cond);
    std::copy(row.begin(), row.end(), q.df_dcond.row(i).begin());
  }
  std::fill(adj.begin(), adj.end(), 0.0);
  tape.adjoint_of(std::span<double>(adj), r.logdet)[0] = 1.0;
  tape.backward(adj, {}, r.node_begin, r.node_end);
  q.dlogdet_dtrans = detail::adjoint_copy(tape, adj, r.trans);
  q.dlogdet_dcond = detail::adjoint_copy(tape, adj, r.cond);
  return q;
}

struct AffineQuantities {
  RealVector sigma;
  RealMatrix dsigma_dcond;
  RealMatrix dmu_dcond;
  RealVector x_trans;
};

/// sigma, mu and their conditioner Jacobians for an affine layer at x.
[[nodiscard]] inline AffineQuantities affine_quantities(const FlowModel& model, std::size_t index,
                                                        std::span<const double> x) {
  const CouplingLayer& l = model.layers().at(index);
  if (l.kind() != LayerKind::kAffine) throw ConfigError("layer is not affine");
  const std::size_t k = l.trans().size();
  const std::size_t m = l.cond().size();
  RealVector xc, xt;
  for (auto j : l.cond()) xc.push_back(x[j]);
  for (auto i : l.trans()) xt.push_back(x[i]);
  Tape tape(model.params());
  const Var in = tape.input(xc);
  const Var h = mlp_forward(l.conditioner(), l.param_offset(), in, tape);
  const Var sigma = tape.exp(tape.clamp(tape.gather(h, l.head_part(0)), -kLogScaleBound, kLogScaleBound));
  const Var mu = tape.gather(h, l.head_part(1));
  AffineQuantities q;
  q.sigma.assign(tape.value(sigma).begin(), tape.value(sigma).end());
  q.x_trans = xt;
  q.dsigma_dcond = RealMatrix(k, m);
  q.dmu_dcond = RealMatrix(k, m);
  RealVector adj(tape.value_count());
  for (int which = 0; which < 2; ++which) {
    const Var v = which == 0 ? sigma : mu;
    RealMatrix& dst = which == 0 ? q.dsigma_dcond : q.dmu_dcond;
    for (std::size_t i = 0; i < k; ++i) {
      std::fill(adj.begin(), adj.end(), 0.0);
      tape.adjoint_of(std::span<double>(adj), v)[i] = 1.0;
      tape.backward(adj, {});
      auto row = tape.adjoint_of(std::span<const double>(adj), in);
      std::copy(row.begin(), row.end(), dst.row(i).begin());
    }
  }
  return q;
}

// --- production recursion -----------------------------------------------------

struct RecursionOptions {
  /// Test hook: drops the dL/dcond term of the coupling recursion.
  bool corrupt = false;
};

/// Advances the full-length row gradient `g` across the layer described by `r`,
/// using layer-local VJPs on `tape`. `adjoint` is scratch space.
inline void recursion_step_vjp(const FlowModel& model, const Tape& tape, const LayerRecord& r, std::span<double> g,
                               RealVector& adjoint, const RecursionOptions& opt = {}) {
  const CouplingLayer& l = model.layers()[r.layer];
  const auto layer = static_cast<std::ptrdiff_t>(r.layer);
  if (r.kind == LayerKind::kScale) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] /= r.diag[i];
    return;
  }
  const auto trans = l.trans();
  const auto cond = l.cond();
  const std::size_t k = trans.size();
  if (adjoint.size() < tape.value_count()) adjoint.resize(tape.value_count());
  std::span<double> adj(adjoint);
  auto zero = [&] { std::fill(adjoint.begin() + r.value_begin, adjoint.begin() + r.value_end, 0.0); };

  RealVector g_new(k);
  if (r.kind == LayerKind::kAffine) {
    for (std::size_t i = 0; i < k; ++i) g_new[i] = g[trans[i]] / r.diag[i];
  } else {
    // L depends on trans: first extract dL/dtrans from the head alone.
    zero();
    tape.adjoint_of(adj, r.logdet)[0] = 1.0;
    tape.backward(adj, {}, r.head_begin, r.node_end);
    auto dl = tape.adjoint_of(std::span<const double>(adj), r.trans);
    for (std::size_t i = 0; i < k; ++i) g_new[i] = (g[trans[i]] - dl[i]) / r.diag[i];
  }
  for (double v : g_new) {
    if (!std::isfinite(v)) throw NumericError(layer, "non-finite gradient recursion");
  }
  zero();
  auto seed = tape.adjoint_of(adj, r.out_trans);
  std::copy(g_new.begin(), g_new.end(), seed.begin());
  if (!opt.corrupt) tape.adjoint_of(adj, r.logdet)[0] = 1.0;
  tape.backward(adj, {}, r.node_begin, r.node_end);
  auto dc = tape.adjoint_of(std::span<const double>(adj), r.cond);
  for (std::size_t j = 0; j < cond.size(); ++j) g[cond[j]] -= dc[j];
  for (std::size_t i = 0; i < k; ++i) g[trans[i]] = g_new[i];
}

/// Records the forward flow on `tape` and returns the trace; `g` receives d log q(x)/dx.
/// No inverse is evaluated.
inline FlowTrace forward_with_G(const FlowModel& model, Tape& tape, std::span<const double> x0, RealVector& g,
                                RealVector& adjoint, const RecursionOptions& opt = {}) {
  g.assign(x0.size(), 0.0);
  model.base().log_density_gradient(x0, g);
  return record_forward(model, tape, x0,
                        [&](const LayerRecord& r) { recursion_step_vjp(model, tape, r, g, adjoint, opt); });
}

/// Records the inverse flow from target samples x and returns the trace; `g`
/// receives G0 = d/dx0 log p0(x0), where p0 is the target pulled back to base space.
inline FlowTrace inverse_with_G(const FlowModel& model, const TargetEnergy& target, Tape& tape,
                                std::span<const double> x, RealVector& g, RealVector& adjoint,
                                const InverseOptions& inv = {}, const RecursionOptions& opt = {}) {
  g.assign(x.size(), 0.0);
  target.energy_gradient(x, g);
  for (double& v : g) v = -v;
  return record_inverse(model, tape, x, inv,
                        [&](const LayerRecord& r) { recursion_step_vjp(model, tape, r, g, adjoint, opt); });
}

/// Samples with log densities and row gradients.
struct AugmentedBatch {
  RealMatrix x;
  RealVector log_q;
  RealMatrix G;
};

/// Batch form of forward_with_G: x = T(x0), log_q = log q(x), G = d log q(x)/dx.
[[nodiscard]] inline AugmentedBatch forward_with_G(const FlowModel& model, const RealMatrix& x0,
                                                   const RecursionOptions& opt = {}) {
  const std::size_t d = model.dim();
  if (x0.cols() != d) throw ConfigError("batch dimension differs from flow dimension");
  AugmentedBatch out{RealMatrix(x0.rows(), d), RealVector(x0.rows()), RealMatrix(x0.rows(), d)};
  parallel_for(x0.rows(), [&](std::size_t begin, std::size_t end) {
    Tape tape(model.params());
    RealVector g, adjoint;
    for (std::size_t n = begin; n < end; ++n) {
      tape.reset(model.params());
      const FlowTrace t = forward_with_G(model, tape, x0.row(n), g, adjoint, opt);
      auto xv = tape.value(t.output);
      std::copy(xv.begin(), xv.end(), out.x.row(n).begin());
      out.log_q[n] = tape.value(t.log_q)[0];
      std::copy(g.begin(), g.end(), out.G.row(n).begin());
    }
  });
  return out;
}

/// Batch form of inverse_with_G, in base space: x holds x0 = T^-1(x), log_q holds the
/// unnormalized pullback log p0(x0) = -E(x) - sum of inverse log-determinants, and G holds G0.
[[nodiscard]] inline AugmentedBatch inverse_with_G(const FlowModel& model, const RealMatrix& x,
                                                   const TargetEnergy& target, const InverseOptions& inv = {},
                                                   const RecursionOptions& opt = {}) {
  const std::size_t d = model.dim();
  if (x.cols() != d || target.dim() != d) throw ConfigError("batch dimension differs from flow dimension");
  AugmentedBatch out{RealMatrix(x.rows(), d), RealVector(x.rows()), RealMatrix(x.rows(), d)};
  parallel_for(x.rows(), [&](std::size_t begin, std::size_t end) {
    Tape tape(model.params());
    RealVector g, adjoint;
    for (std::size_t n = begin; n < end; ++n) {
      tape.reset(model.params());
      const FlowTrace t = inverse_with_G(model, target, tape, x.row(n), g, adjoint, inv, opt);
      auto xv = tape.value(t.output);
      std::copy(xv.begin(), xv.end(), out.x.row(n).begin());
      double lp = -target.energy(x.row(n));
      for (const auto& r : t.layers) lp -= tape.value(r.logdet)[0];
      out.log_q[n] = lp;
      std::copy(g.begin(), g.end(), out.G.row(n).begin());
    }
  });
  return out;
}

}  // namespace pathflow

#endif
