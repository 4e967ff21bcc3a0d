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

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "test_support.hpp"

namespace pathflow {
namespace {

using testing::random_vector;

// --- dense helpers -------------------------------------------------------------

TEST(Dense, LogSumExpIsStableForLargeArguments) {
  const RealVector v = {1000.0, 1000.0};
  EXPECT_NEAR(log_sum_exp(v), 1000.0 + std::log(2.0), 1e-12);
  const RealVector w = {-1000.0, -1001.0};
  EXPECT_NEAR(log_sum_exp(w), -1000.0 + std::log1p(std::exp(-1.0)), 1e-12);
}

TEST(Dense, LogSigmoidMatchesDirectFormulaAndSaturates) {
  for (double x : {-5.0, -0.3, 0.0, 0.7, 4.0}) EXPECT_NEAR(log_sigmoid(x), -std::log1p(std::exp(-x)), 1e-14);
  EXPECT_NEAR(log_sigmoid(-800.0), -800.0, 1e-12);
  EXPECT_EQ(log_sigmoid(800.0), 0.0);
}

TEST(Dense, RelativeErrorIsScaledByTheLargerOperand) {
  EXPECT_NEAR(relative_error(RealVector{1.0, 2.0}, RealVector{1.0, 2.2}), 0.2 / 2.2, 1e-15);
  EXPECT_EQ(relative_error(RealVector{0.0}, RealVector{0.0}), 0.0);
}

TEST(Dense, SolveRowSystemInvertsRowTimesMatrix) {
  Rng rng = make_rng(3);
  RealMatrix a(4, 4);
  for (double& v : a.data()) v = std::normal_distribution<double>()(rng);
  const RealVector x = random_vector(rng, 4);
  RealVector b(4, 0.0);
  for (std::size_t j = 0; j < 4; ++j) {
    for (std::size_t i = 0; i < 4; ++i) b[j] += x[i] * a(i, j);
  }
  EXPECT_LT(relative_error(solve_row_system(a, b), x), 1e-12);
}

// --- MLP -----------------------------------------------------------------------

TEST(Mlp, ZeroNetworkOutputsZero) {
  const MlpSpec spec{{3, 5, 2}, Activation::kTanh, false};
  const RealVector params(spec.param_count(), 0.0);
  const RealVector out = mlp_forward(spec, params, RealVector{0.3, -1.0, 2.0});
  EXPECT_EQ(out, (RealVector{0.0, 0.0}));
}

TEST(Mlp, IdentityLinearLayerReturnsInput) {
  // W = I (3 x 3) followed by b = 0.
  RealVector params(12, 0.0);
  for (std::size_t i = 0; i < 3; ++i) params[i * 3 + i] = 1.0;
  Tape tape(params);
  const RealVector x = {0.5, -2.0, 7.0};
  const Var y = tape.linear(tape.input(x), 0, 3);
  EXPECT_TRUE(std::equal(x.begin(), x.end(), tape.value(y).begin()));
}

// Straight-line re-evaluation of a 2 -> 3 -> 1 network.
double reference_2_3_1(std::span<const double> p, std::span<const double> x, bool weight_norm) {
  std::size_t off = 0;
  double h[3];
  for (int i = 0; i < 3; ++i) {
    double w0 = p[off + 2 * i], w1 = p[off + 2 * i + 1];
    double scale = 1.0;
    if (weight_norm) scale = p[off + 6 + i] / std::sqrt(w0 * w0 + w1 * w1);
    const double bias = p[off + 6 + (weight_norm ? 3 : 0) + i];
    h[i] = std::tanh(scale * (w0 * x[0] + w1 * x[1]) + bias);
  }
  off += weight_norm ? 12 : 9;
  double v[3] = {p[off], p[off + 1], p[off + 2]};
  double scale = 1.0;
  if (weight_norm) scale = p[off + 3] / std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  const double bias = p[off + 3 + (weight_norm ? 1 : 0)];
  return scale * (v[0] * h[0] + v[1] * h[1] + v[2] * h[2]) + bias;
}

TEST(Mlp, MatchesStraightLineReevaluation) {
  Rng rng = make_rng(11);
  for (bool wn : {false, true}) {
    const MlpSpec spec{{2, 3, 1}, Activation::kTanh, wn};
    for (int trial = 0; trial < 20; ++trial) {
      const RealVector p = random_vector(rng, spec.param_count());
      const RealVector x = random_vector(rng, 2);
      const RealVector out = mlp_forward(spec, p, x);
      const double ref = reference_2_3_1(p, x, wn);
      EXPECT_NEAR(out[0], ref, 1e-14 * std::max(1.0, std::abs(ref))) << "weight_norm=" << wn;
    }
  }
}

TEST(Mlp, RejectsMismatchedInputAndParameters) {
  const MlpSpec spec{{2, 3, 1}, Activation::kRelu, false};
  const RealVector p(spec.param_count(), 0.1);
  EXPECT_THROW((void)mlp_forward(spec, p, RealVector{1.0}), ConfigError);
  EXPECT_THROW((void)mlp_forward(spec, RealVector(3, 0.0), RealVector{1.0, 2.0}), ConfigError);
  const MlpSpec no_hidden{{2, 1}, Activation::kRelu, false};
  EXPECT_THROW(no_hidden.validate(), ConfigError);
}

TEST(Mlp, ZeroOutputScaleInitGivesZeroOutput) {
  Rng rng = make_rng(5);
  for (bool wn : {false, true}) {
    const MlpSpec spec{{4, 6, 6, 3}, Activation::kTanh, wn};
    RealVector p(spec.param_count());
    mlp_init(spec, p, rng, 0.0);
    const RealVector out = mlp_forward(spec, p, random_vector(rng, 4));
    for (double v : out) EXPECT_EQ(v, 0.0);
  }
}

// --- tape VJP --------------------------------------------------------------------

TEST(Tape, LinearLayerParameterGradientIsOuterProduct) {
  Rng rng = make_rng(7);
  const std::size_t in = 3, out = 2;
  const RealVector params = random_vector(rng, out * in + out);
  const RealVector x = random_vector(rng, in);
  const RealVector s = random_vector(rng, out);
  Tape tape(params);
  (void)tape.linear(tape.input(x), 0, out);
  const VjpResult r = tape_vjp(tape, s);
  for (std::size_t i = 0; i < out; ++i) {
    for (std::size_t j = 0; j < in; ++j) EXPECT_DOUBLE_EQ(r.param_grad[i * in + j], s[i] * x[j]);
    EXPECT_DOUBLE_EQ(r.param_grad[out * in + i], s[i]);
  }
  for (std::size_t j = 0; j < in; ++j) {
    double expect = 0.0;
    for (std::size_t i = 0; i < out; ++i) expect += s[i] * params[i * in + j];
    EXPECT_NEAR(r.input_grad[j], expect, 1e-14);
  }
}

TEST(Tape, ZeroSeedGivesZeroGradients) {
  Rng rng = make_rng(8);
  const MlpSpec spec{{3, 4, 2}, Activation::kTanh, true};
  const RealVector p = random_vector(rng, spec.param_count());
  Tape tape(p);
  (void)mlp_forward(spec, 0, tape.input(random_vector(rng, 3)), tape);
  const VjpResult r = tape_vjp(tape, RealVector(2, 0.0));
  for (double v : r.param_grad) EXPECT_EQ(v, 0.0);
  for (double v : r.input_grad) EXPECT_EQ(v, 0.0);
}

TEST(Tape, MlpJacobianRowsMatchFiniteDifferences) {
  Rng rng = make_rng(9);
  for (auto act : {Activation::kTanh, Activation::kRelu}) {
    for (bool wn : {false, true}) {
      const MlpSpec spec{{3, 5, 4, 2}, act, wn};
      const RealVector p = random_vector(rng, spec.param_count());
      const RealVector x = random_vector(rng, 3);
      for (std::size_t i = 0; i < 2; ++i) {
        Tape tape(p);
        const Var in = tape.input(x);
        (void)mlp_forward(spec, 0, in, tape);
        RealVector seed(2, 0.0);
        seed[i] = 1.0;
        const VjpResult r = tape_vjp(tape, seed, in);
        const RealVector fd_x = finite_difference_gradient(
            [&](std::span<const double> xx) { return mlp_forward(spec, p, xx)[i]; }, x, 1e-6);
        const RealVector fd_p = finite_difference_gradient(
            [&](std::span<const double> pp) { return mlp_forward(spec, pp, x)[i]; }, p, 1e-6);
        EXPECT_LT(relative_error(r.input_grad, fd_x), 1e-6);
        EXPECT_LT(relative_error(r.param_grad, fd_p), 1e-6);
      }
    }
  }
}

TEST(Tape, VjpIsLinearInTheSeed) {
  Rng rng = make_rng(10);
  const MlpSpec spec{{4, 6, 3}, Activation::kTanh, true};
  const RealVector p = random_vector(rng, spec.param_count());
  Tape tape(p);
  (void)mlp_forward(spec, 0, tape.input(random_vector(rng, 4)), tape);
  for (int trial = 0; trial < 10; ++trial) {
    const RealVector s1 = random_vector(rng, 3), s2 = random_vector(rng, 3);
    const double a = std::normal_distribution<double>()(rng), b = std::normal_distribution<double>()(rng);
    RealVector mix(3);
    for (std::size_t i = 0; i < 3; ++i) mix[i] = a * s1[i] + b * s2[i];
    const VjpResult r1 = tape_vjp(tape, s1), r2 = tape_vjp(tape, s2), rm = tape_vjp(tape, mix);
    RealVector comb(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) comb[i] = a * r1.param_grad[i] + b * r2.param_grad[i];
    EXPECT_LT(relative_error(rm.param_grad, comb), 1e-12);
  }
}

TEST(Tape, RepeatedBackwardIsBitwiseIdentical) {
  Rng rng = make_rng(12);
  const MlpSpec spec{{4, 6, 3}, Activation::kRelu, false};
  const RealVector p = random_vector(rng, spec.param_count());
  Tape tape(p);
  (void)mlp_forward(spec, 0, tape.input(random_vector(rng, 4)), tape);
  const RealVector seed = random_vector(rng, 3);
  const VjpResult a = tape_vjp(tape, seed), b = tape_vjp(tape, seed);
  EXPECT_EQ(a.param_grad, b.param_grad);
  EXPECT_EQ(a.input_grad, b.input_grad);
}

// Every primitive against central differences at 100 random points.
struct Primitive {
  const char* name;
  std::size_t inputs;  ///< operand length (two operands share it for binary ops)
  bool binary;
  std::function<Var(Tape&, Var, Var)> record;
  std::function<double(double)> sample_shift;  // maps a normal draw to a safe evaluation point
};

TEST(Tape, EveryPrimitiveMatchesFiniteDifferences) {
  static const std::uint32_t gather_idx[] = {2, 0, 2, 1};
  static const std::uint32_t idx_a[] = {3, 0}, idx_b[] = {1, 4, 2};
  auto away_from_zero = [](double v) { return v >= 0 ? v + 0.2 : v - 0.2; };
  auto identity = [](double v) { return v; };
  const std::vector<Primitive> prims = {
      {"tanh", 3, false, [](Tape& t, Var a, Var) { return t.tanh(a); }, identity},
      {"relu", 3, false, [](Tape& t, Var a, Var) { return t.relu(a); }, away_from_zero},
      {"exp", 3, false, [](Tape& t, Var a, Var) { return t.exp(a); }, identity},
      {"log_abs", 3, false, [](Tape& t, Var a, Var) { return t.log_abs(a); }, away_from_zero},
      {"log_sigmoid", 3, false, [](Tape& t, Var a, Var) { return t.log_sigmoid(a); }, identity},
      {"neg", 3, false, [](Tape& t, Var a, Var) { return t.neg(a); }, identity},
      {"scale", 3, false, [](Tape& t, Var a, Var) { return t.scale(a, -2.5); }, identity},
      {"clamp", 3, false, [](Tape& t, Var a, Var) { return t.clamp(a, -10.0, 10.0); }, identity},
      {"add", 3, true, [](Tape& t, Var a, Var b) { return t.add(a, b); }, identity},
      {"sub", 3, true, [](Tape& t, Var a, Var b) { return t.sub(a, b); }, identity},
      {"mul", 3, true, [](Tape& t, Var a, Var b) { return t.mul(a, b); }, identity},
      {"div", 3, true, [](Tape& t, Var a, Var b) { return t.div(a, b); }, away_from_zero},
      {"gather", 3, false, [](Tape& t, Var a, Var) { return t.gather(a, gather_idx); }, identity},
      {"sum", 3, false, [](Tape& t, Var a, Var) { return t.sum(a); }, identity},
      {"segment_log_sum_exp", 6, false, [](Tape& t, Var a, Var) { return t.segment_log_sum_exp(a, 3); }, identity},
  };
  Rng rng = make_rng(13);
  for (const auto& prim : prims) {
    double worst = 0.0;
    for (int point = 0; point < 100; ++point) {
      const std::size_t n = prim.inputs * (prim.binary ? 2 : 1);
      RealVector x = random_vector(rng, n);
      for (double& v : x) v = prim.sample_shift(v);
      auto run = [&](std::span<const double> xx, Tape& t) {
        const Var a = t.input(xx.subspan(0, prim.inputs));
        const Var b = prim.binary ? t.input(xx.subspan(prim.inputs)) : Var{};
        return prim.record(t, a, b);
      };
      Tape probe;
      const std::size_t out_len = probe.length(run(x, probe));
      const RealVector seed = random_vector(rng, out_len);
      Tape tape;
      const Var out = run(x, tape);
      RealVector adj(tape.value_count(), 0.0);
      auto s = tape.adjoint_of(std::span<double>(adj), out);
      std::copy(seed.begin(), seed.end(), s.begin());
      tape.backward(adj, {});
      RealVector analytic(n);
      auto ga = tape.adjoint_of(std::span<const double>(adj), Var{0});
      std::copy(ga.begin(), ga.end(), analytic.begin());
      if (prim.binary) {
        auto gb = tape.adjoint_of(std::span<const double>(adj), Var{1});
        std::copy(gb.begin(), gb.end(), analytic.begin() + static_cast<std::ptrdiff_t>(prim.inputs));
      }
      const RealVector numeric = finite_difference_gradient(
          [&](std::span<const double> xx) {
            Tape t;
            const Var o = run(xx, t);
            return dot(t.value(o), seed);
          },
          x, 1e-6);
      worst = std::max(worst, relative_error(analytic, numeric));
    }
    EXPECT_LT(worst, 1e-6) << prim.name;
  }

  // scatter, linear and wn_linear also carry parameters or index sets.
  for (int point = 0; point < 100; ++point) {
    const RealVector a = random_vector(rng, 2), b = random_vector(rng, 3);
    Tape t;
    const Var va = t.input(a), vb = t.input(b);
    const Var y = t.scatter(va, idx_a, vb, idx_b, 5);
    auto v = t.value(y);
    EXPECT_EQ(v[3], a[0]);
    EXPECT_EQ(v[0], a[1]);
    EXPECT_EQ(v[1], b[0]);
    EXPECT_EQ(v[4], b[1]);
    EXPECT_EQ(v[2], b[2]);
    const RealVector seed = random_vector(rng, 5);
    RealVector adj(t.value_count(), 0.0);
    auto sl = t.adjoint_of(std::span<double>(adj), y);
    std::copy(seed.begin(), seed.end(), sl.begin());
    t.backward(adj, {});
    EXPECT_EQ(t.adjoint_of(std::span<const double>(adj), va)[0], seed[3]);
    EXPECT_EQ(t.adjoint_of(std::span<const double>(adj), vb)[2], seed[2]);
  }
  for (bool wn : {false, true}) {
    double worst = 0.0;
    for (int point = 0; point < 100; ++point) {
      const std::size_t in = 3, out = 2;
      const RealVector p = random_vector(rng, out * in + out * (wn ? 2 : 1));
      const RealVector x = random_vector(rng, in);
      const RealVector seed = random_vector(rng, out);
      auto eval = [&](std::span<const double> pp) {
        Tape t(pp);
        const Var y = wn ? t.wn_linear(t.input(x), 0, out) : t.linear(t.input(x), 0, out);
        return dot(t.value(y), seed);
      };
      Tape t(p);
      (void)(wn ? t.wn_linear(t.input(x), 0, out) : t.linear(t.input(x), 0, out));
      const VjpResult r = tape_vjp(t, seed);
      worst = std::max(worst, relative_error(r.param_grad, finite_difference_gradient(eval, p, 1e-6)));
    }
    EXPECT_LT(worst, 1e-6) << (wn ? "wn_linear" : "linear");
  }
}

TEST(Tape, RejectsMismatchedOperands) {
  Tape t;
  const Var a = t.input(RealVector{1.0, 2.0});
  const Var b = t.input(RealVector{1.0});
  EXPECT_THROW((void)t.add(a, b), ConfigError);
  const std::uint32_t bad[] = {5};
  EXPECT_THROW((void)t.gather(a, bad), ConfigError);
  EXPECT_THROW((void)t.param(0, 1), ConfigError);
  EXPECT_THROW((void)tape_vjp(Tape{}, RealVector{}), UsageError);
}

TEST(Tape, ParameterGradientAccumulatesOverRepeatedUse) {
  const RealVector p = {2.0};
  Tape t(p);
  const Var w = t.param(0, 1);
  (void)t.mul(w, w);  // w^2
  const VjpResult r = tape_vjp(t, RealVector{1.0}, Var{});
  EXPECT_DOUBLE_EQ(r.param_grad[0], 4.0);
}

// --- finite differences ---------------------------------------------------------

TEST(FiniteDifference, QuadraticGivesExactSlope) {
  const RealVector theta = {3.0};
  const RealVector g =
      finite_difference_gradient([](std::span<const double> t) { return t[0] * t[0]; }, theta, 1e-4);
  EXPECT_NEAR(g[0], 6.0, 1e-7);
}

TEST(FiniteDifference, ConstantFunctionGivesZero) {
  const RealVector theta = {1.0, -2.0, 0.5};
  const RealVector g = finite_difference_gradient([](std::span<const double>) { return 4.2; }, theta, 1e-4);
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(FiniteDifference, RejectsBadStepAndNonFiniteValues) {
  const RealVector theta = {1.0};
  EXPECT_THROW((void)finite_difference_gradient([](std::span<const double>) { return 0.0; }, theta, 0.0),
               ConfigError);
  EXPECT_THROW((void)finite_difference_gradient([](std::span<const double>) { return std::nan(""); }, theta, 1e-3),
               OracleError);
}

TEST(FiniteDifference, FlowLogDensityMatchesTapeParameterGradient) {
  Rng rng = make_rng(14);
  FlowModel model = testing::alternating_flow(2, 2);
  model.randomize(rng, 0.5);
  const RealVector x = {0.4, -1.1};
  Tape tape(model.params());
  const FlowTrace t = record_inverse(model, tape, x);
  RealVector adj(tape.value_count(), 0.0);
  tape.adjoint_of(std::span<double>(adj), t.log_q)[0] = 1.0;
  RealVector grad(model.param_count(), 0.0);
  tape.backward(adj, grad);
  const RealVector theta(model.params().begin(), model.params().end());
  const RealVector numeric = finite_difference_gradient(
      [&](std::span<const double> th) {
        FlowModel m = model;
        m.set_params(th);
        return flow_inverse_logq(m, x);
      },
      theta, 1e-6);
  EXPECT_LT(relative_error(grad, numeric), 1e-5);
}

}  // namespace
}  // namespace pathflow
