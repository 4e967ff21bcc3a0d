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

#include <chrono>
#include <cmath>

#include <gtest/gtest.h>

#include "test_support.hpp"

namespace pathflow {
namespace {

using testing::alternating_flow;
using testing::coupling_spec;
using testing::matrix_from;
using testing::random_vector;
using testing::set_constant_head;

// d log q(x)/dx by reverse-mode differentiation of the recorded inverse pass.
RealVector inverse_pass_gradient(const FlowModel& m, std::span<const double> x, const InverseOptions& opt = {}) {
  Tape tape(m.params());
  const FlowTrace t = record_inverse(m, tape, x, opt);
  const double one[1] = {1.0};
  return tape_vjp(tape, one, t.input).input_grad;
}

RealVector forward_G(const FlowModel& m, std::span<const double> x0, RealVector* x_out = nullptr) {
  Tape tape(m.params());
  RealVector g, adjoint;
  const FlowTrace t = forward_with_G(m, tape, x0, g, adjoint);
  if (x_out) x_out->assign(tape.value(t.output).begin(), tape.value(t.output).end());
  return g;
}

FlowModel mixed_flow(std::size_t dim, std::size_t layers, Rng& rng, double scale = 0.5) {
  FlowArchitecture a;
  a.dim = dim;
  a.base = BaseDensity::standard_normal(dim);
  for (std::size_t l = 0; l < layers; ++l) {
    a.layers.push_back(coupling_spec(l % 2 ? LayerKind::kLogisticMixture : LayerKind::kAffine, alternating_mask(dim, l / 2 + l)));
  }
  FlowModel m(a);
  m.randomize(rng, scale);
  return m;
}

// --- recursion_init ----------------------------------------------------------------

TEST(RecursionInit, StandardNormalAtTheOrigin) {
  const std::uint32_t trans[] = {0, 2}, cond[] = {1};
  const RecursionState s = recursion_init(BaseDensity::standard_normal(3), RealVector(3, 0.0), trans, cond);
  EXPECT_EQ(s.g_trans, (RealVector{0.0, 0.0}));
  EXPECT_EQ(s.g_cond, (RealVector{0.0}));
}

TEST(RecursionInit, StandardNormalIsMinusX) {
  const std::uint32_t trans[] = {0}, cond[] = {1};
  const RecursionState s = recursion_init(BaseDensity::standard_normal(2), RealVector{1.0, 2.0}, trans, cond);
  EXPECT_EQ(s.g_trans, (RealVector{-1.0}));
  EXPECT_EQ(s.g_cond, (RealVector{-2.0}));
  EXPECT_EQ(s.full(), (RealVector{-1.0, -2.0}));
}

TEST(RecursionInit, UniformBaseGivesAZeroState) {
  const std::uint32_t trans[] = {1}, cond[] = {0};
  const RecursionState s = recursion_init(BaseDensity::uniform(2, 0.0, 1.0), RealVector{0.3, 0.6}, trans, cond);
  EXPECT_EQ(s.full(), (RealVector{0.0, 0.0}));
}

TEST(RecursionInit, SplitMustCoverTheGradient) {
  const std::uint32_t trans[] = {0}, cond[] = {1};
  EXPECT_THROW((void)split_gradient(RealVector{1.0, 2.0, 3.0}, trans, cond), ConfigError);
}

// --- dense coupling and affine steps ---------------------------------------------

TEST(RecursionStep, IdentityLayerLeavesTheStateUnchanged) {
  RecursionState s;
  s.g_trans = {0.4, -1.0};
  s.g_cond = {2.5};
  s.trans = {0, 1};
  s.cond = {2};
  CouplingQuantities q{{1.0, 1.0}, RealMatrix(2, 1), {0.0, 0.0}, {0.0}};
  const RecursionState out = recursion_step_coupling(s, q);
  EXPECT_EQ(out.g_trans, s.g_trans);
  EXPECT_EQ(out.g_cond, s.g_cond);

  const RecursionState a = recursion_step_affine(s, RealVector{1.0, 1.0}, RealMatrix(2, 1), RealMatrix(2, 1),
                                                 RealVector{0.7, 0.1});
  EXPECT_EQ(a.g_trans, s.g_trans);
  EXPECT_EQ(a.g_cond, s.g_cond);
}

TEST(RecursionStep, ConstantScaleHandCase) {
  // x1 = 2 x0 with x0 = 1: log q1(x1) = log N(x1 / 2) - log 2, whose derivative is -x1 / 4 = -0.5.
  FlowModel m = testing::alternating_flow(2, 1);
  const double head[2] = {std::log(2.0), 0.0};
  set_constant_head(m, 0, head);
  const RealVector x0 = {1.0, 0.3};
  const RecursionState s0 = recursion_init(m.base(), x0, m.layers()[0].trans(), m.layers()[0].cond());
  const RecursionState s1 = recursion_step_coupling(s0, coupling_quantities(m, 0, x0));
  EXPECT_DOUBLE_EQ(s1.g_trans[0], -0.5);
  EXPECT_DOUBLE_EQ(s1.g_cond[0], -0.3);
  const AffineQuantities aq = affine_quantities(m, 0, x0);
  const RecursionState s2 = recursion_step_affine(s0, aq.sigma, aq.dsigma_dcond, aq.dmu_dcond, aq.x_trans);
  EXPECT_DOUBLE_EQ(s2.g_trans[0], -0.5);
  EXPECT_DOUBLE_EQ(s2.g_cond[0], -0.3);
  EXPECT_EQ(forward_G(m, x0), (RealVector{-0.5, -0.3}));
}

TEST(RecursionStep, AffineSpecializationMatchesTheGenericStep) {
  Rng rng = make_rng(1);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    FlowModel m = alternating_flow(6, 1, LayerKind::kAffine, {10, 10});
    m.randomize(rng, 0.8);
    const RealVector x = random_vector(rng, 6);
    const auto& l = m.layers()[0];
    RecursionState s = split_gradient(random_vector(rng, 6), l.trans(), l.cond());
    const RecursionState generic = recursion_step_coupling(s, coupling_quantities(m, 0, x));
    const AffineQuantities aq = affine_quantities(m, 0, x);
    const RecursionState affine = recursion_step_affine(s, aq.sigma, aq.dsigma_dcond, aq.dmu_dcond, aq.x_trans);
    worst = std::max(worst, relative_error(generic.full(), affine.full()));
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(RecursionStep, CouplingStepMatchesTheDenseGeneralFormula) {
  Rng rng = make_rng(2);
  for (LayerKind kind : {LayerKind::kAffine, LayerKind::kLogisticMixture}) {
    for (int trial = 0; trial < 20; ++trial) {
      FlowModel m = alternating_flow(5, 1, kind);
      m.randomize(rng, 0.6);
      const RealVector x = random_vector(rng, 5);
      const auto& l = m.layers()[0];
      const RealVector g = random_vector(rng, 5);
      const CouplingQuantities q = coupling_quantities(m, 0, x);
      const RecursionState step = recursion_step_coupling(split_gradient(g, l.trans(), l.cond()), q);

      // Dense Jacobian of the whole layer by central differences of the forward map.
      RealMatrix jac(5, 5);
      for (std::size_t j = 0; j < 5; ++j) {
        RealVector xp = x, xm = x;
        xp[j] += 1e-6;
        xm[j] -= 1e-6;
        const RealVector yp = (kind == LayerKind::kAffine ? affine_forward(m, 0, xp) : logistic_mixture_forward(m, 0, xp)).x;
        const RealVector ym = (kind == LayerKind::kAffine ? affine_forward(m, 0, xm) : logistic_mixture_forward(m, 0, xm)).x;
        for (std::size_t i = 0; i < 5; ++i) jac(i, j) = (yp[i] - ym[i]) / 2e-6;
      }
      RealVector dl(5, 0.0);
      for (std::size_t i = 0; i < l.trans().size(); ++i) dl[l.trans()[i]] = q.dlogdet_dtrans[i];
      for (std::size_t j = 0; j < l.cond().size(); ++j) dl[l.cond()[j]] = q.dlogdet_dcond[j];
      EXPECT_LT(relative_error(general_recursion_reference(g, jac, dl), step.full()), 1e-7) << to_string(kind);
    }
  }
}

TEST(RecursionStep, ZeroDiagonalIsASingularJacobian) {
  RecursionState s;
  s.g_trans = {1.0};
  s.g_cond = {1.0};
  s.trans = {0};
  s.cond = {1};
  CouplingQuantities q{{0.0}, RealMatrix(1, 1), {0.0}, {0.0}};
  try {
    (void)recursion_step_coupling(s, q, 4);
    FAIL() << "expected a singular Jacobian error";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.layer(), 4);
  }
  EXPECT_THROW((void)recursion_step_affine(s, RealVector{0.0}, RealMatrix(1, 1), RealMatrix(1, 1), RealVector{1.0}, 2),
               NumericError);
}

TEST(RecursionStep, DenseReferenceIsLimitedInDimension) {
  EXPECT_THROW((void)general_recursion_reference(RealVector(9, 0.0), RealMatrix(9, 9), RealVector(9, 0.0)), ConfigError);
}

// --- forward_with_G ----------------------------------------------------------------

TEST(ForwardWithG, IdentityFlowReturnsTheBaseGradient) {
  FlowModel m = alternating_flow(4, 3, LayerKind::kLogisticMixture);
  Rng rng = make_rng(3);
  m.initialize_identity(rng);
  const RealVector x0 = random_vector(rng, 4);
  const AugmentedBatch b = forward_with_G(m, matrix_from(1, 4, x0));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(b.G(0, i), -x0[i], 1e-12);
  EXPECT_NEAR(b.log_q[0], m.base().log_density(x0), 1e-12);
}

TEST(ForwardWithG, ExplicitFlowMatchesTheInverseTape) {
  Rng rng = make_rng(4);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    FlowModel m = alternating_flow(6, 5, LayerKind::kAffine, {12, 12});
    m.randomize(rng, 0.5);
    const RealVector x0 = random_vector(rng, 6);
    RealVector x;
    const RealVector g = forward_G(m, x0, &x);
    worst = std::max(worst, relative_error(g, inverse_pass_gradient(m, x)));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(ForwardWithG, MixedFlowMatchesFiniteDifferencesAndTheInverseTape) {
  Rng rng = make_rng(5);
  double worst_fd = 0.0, worst_tape = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const FlowModel m = mixed_flow(4, 4, rng);
    const RealVector x0 = random_vector(rng, 4);
    RealVector x;
    const RealVector g = forward_G(m, x0, &x);
    const RealVector fd = finite_difference_gradient([&](auto xx) { return flow_inverse_logq(m, xx); }, x, 1e-5);
    worst_fd = std::max(worst_fd, relative_error(g, fd));
    worst_tape = std::max(worst_tape, relative_error(g, inverse_pass_gradient(m, x)));
  }
  EXPECT_LT(worst_fd, 1e-5);
  EXPECT_LT(worst_tape, 1e-7);
}

TEST(ForwardWithG, NeverInverts) {
  Rng rng = make_rng(6);
  const FlowModel m = mixed_flow(6, 4, rng);
  const RealMatrix x0 = m.base().sample(50, rng);
  reset_bisection_count();
  const AugmentedBatch b = forward_with_G(m, x0);
  EXPECT_EQ(bisection_call_count(), 0u);
  // The same batch through the inverse does bisect.
  (void)flow_inverse_logq(m, b.x);
  EXPECT_GT(bisection_call_count(), 0u);
}

TEST(ForwardWithG, BatchAgreesWithFlowForward) {
  Rng rng = make_rng(7);
  const FlowModel m = mixed_flow(5, 3, rng);
  const RealMatrix x0 = m.base().sample(30, rng);
  const AugmentedBatch b = forward_with_G(m, x0);
  const FlowBatch f = flow_forward(m, x0);
  for (std::size_t k = 0; k < f.x.data().size(); ++k) EXPECT_EQ(b.x.data()[k], f.x.data()[k]);
  for (std::size_t n = 0; n < 30; ++n) EXPECT_EQ(b.log_q[n], f.log_q[n]);
}

TEST(ForwardWithG, ScaleLayerGradient) {
  // q(x) = N(x / s) / s^d, so d log q/dx = -x / s^2.
  const FlowModel m = testing::scale_flow(3, 1.6);
  const RealVector x0 = {0.5, -1.0, 2.0};
  RealVector x;
  const RealVector g = forward_G(m, x0, &x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g[i], -x[i] / (1.6 * 1.6), 1e-15);
}

TEST(ForwardWithG, CorruptedRecursionIsDetectable) {
  Rng rng = make_rng(8);
  FlowModel m = alternating_flow(4, 3, LayerKind::kAffine);
  m.randomize(rng, 0.8);
  const RealMatrix x0 = matrix_from(1, 4, random_vector(rng, 4));
  RecursionOptions bad;
  bad.corrupt = true;
  const AugmentedBatch good = forward_with_G(m, x0);
  const AugmentedBatch broken = forward_with_G(m, x0, bad);
  EXPECT_GT(relative_error(good.G.data(), broken.G.data()), 1e-4);
}

// --- inverse_with_G ----------------------------------------------------------------

TEST(InverseWithG, IdentityFlowOnTheBaseTarget) {
  FlowModel m = alternating_flow(3, 2, LayerKind::kAffine);
  Rng rng = make_rng(9);
  m.initialize_identity(rng);
  const BaseSelfTarget target(m.base());
  const RealVector x = random_vector(rng, 3);
  const AugmentedBatch b = inverse_with_G(m, matrix_from(1, 3, x), target);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(b.x(0, i), x[i], 1e-15);
    EXPECT_NEAR(b.G(0, i), -x[i], 1e-15);
  }
  EXPECT_NEAR(b.log_q[0], m.base().log_density(x), 1e-14);
}

TEST(InverseWithG, PullbackGradientMatchesFiniteDifferences) {
  Rng rng = make_rng(10);
  const auto gmm = std::make_shared<GmmTarget>(GmmParams{1, 0.5});
  // A lone scale layer is the only bijection available in one dimension.
  const FlowModel m1 = testing::scale_flow(1, 1.3);
  // log p0(x0) = log p(T(x0)) + log|det dT/dx0|, evaluated through the forward map.
  auto pullback = [&](const FlowModel& m, const TargetEnergy& t, std::span<const double> x0) {
    const FlowBatch f = flow_forward(m, matrix_from(1, x0.size(), RealVector(x0.begin(), x0.end())));
    return -t.energy(f.x.row(0)) + m.base().log_density(x0) - f.log_q[0];
  };
  for (double x : {-1.7, -0.2, 0.4, 2.2}) {
    const AugmentedBatch b = inverse_with_G(m1, matrix_from(1, 1, {x}), *gmm);
    const RealVector x0 = {b.x(0, 0)};
    const RealVector fd = finite_difference_gradient([&](auto xx) { return pullback(m1, *gmm, xx); }, x0, 1e-5);
    EXPECT_NEAR(b.G(0, 0), fd[0], 1e-5 * std::max(1.0, std::abs(fd[0])));
    EXPECT_NEAR(b.log_q[0], pullback(m1, *gmm, x0), 1e-12);
  }

  const GmmTarget gmm3(GmmParams{3, 0.5});
  for (int trial = 0; trial < 10; ++trial) {
    const FlowModel m = mixed_flow(3, 3, rng);
    const RealVector x = random_vector(rng, 3);
    const AugmentedBatch b = inverse_with_G(m, matrix_from(1, 3, x), gmm3);
    const RealVector x0(b.x.row(0).begin(), b.x.row(0).end());
    const RealVector fd = finite_difference_gradient([&](auto xx) { return pullback(m, gmm3, xx); }, x0, 1e-5);
    EXPECT_LT(relative_error(b.G.data(), fd), 1e-5);
  }
}

TEST(InverseWithG, PullbackAgreesWithTheForwardPass) {
  Rng rng = make_rng(11);
  const Phi4Target target(Phi4Params{2, 3, -1.0, 0.5});
  for (int trial = 0; trial < 10; ++trial) {
    FlowModel m = alternating_flow(6, 4, LayerKind::kAffine);
    m.randomize(rng, 0.5);
    const RealMatrix x = matrix_from(1, 6, random_vector(rng, 6));
    const AugmentedBatch b = inverse_with_G(m, x, target);
    const FlowBatch f = flow_forward(m, b.x);
    // log p0(x0) = -E(T(x0)) + log q0(x0) - log q(T(x0)).
    const double expected = -target.energy(f.x.row(0)) + m.base().log_density(b.x.row(0)) - f.log_q[0];
    EXPECT_NEAR(b.log_q[0], expected, 1e-10);
  }
}

// --- cost ----------------------------------------------------------------------------

TEST(ForwardWithG, CostGrowsWithDimension) {
  // Coarse sanity bound; the acceptance binary measures the scaling properly.
  Rng rng = make_rng(12);
  auto time_dim = [&](std::size_t d) {
    FlowModel m = alternating_flow(d, 4, LayerKind::kAffine, {32});
    m.randomize(rng, 0.3);
    const RealMatrix x0 = m.base().sample(64, rng);
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < 3; ++r) (void)forward_with_G(m, x0);
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  const double small = time_dim(8);
  const double large = time_dim(64);
  EXPECT_LT(large / small, 64.0);
}

}  // namespace
}  // namespace pathflow
