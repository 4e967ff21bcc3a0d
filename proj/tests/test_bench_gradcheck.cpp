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

#include <bit>
#include <cmath>

#include <gtest/gtest.h>

#include "test_support.hpp"

namespace pathflow {
namespace {

// --- helpers -------------------------------------------------------------------------------

TEST(Bench, QuantileInterpolatesLinearly) {
  EXPECT_EQ(quantile({3.0, 1.0, 2.0}, 0.5), 2.0);
  EXPECT_EQ(quantile({4.0, 1.0, 3.0, 2.0}, 0.5), 2.5);
  EXPECT_EQ(quantile({4.0, 1.0, 3.0, 2.0}, 0.25), 1.75);
  EXPECT_EQ(quantile({4.0, 1.0, 3.0, 2.0}, 1.0), 4.0);
  EXPECT_EQ(quantile({7.0}, 0.75), 7.0);
  EXPECT_THROW((void)quantile({}, 0.5), UsageError);
}

TEST(Bench, FnvMatchesAByteLevelReference) {
  EXPECT_EQ(fnv1a({}), 0xcbf29ce484222325ull);
  static_assert(std::endian::native == std::endian::little);
  const RealVector v = {0.0, -1.5, 3.141592653589793, 1e-300};
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (double x : v) {
    const auto bits = std::bit_cast<std::uint64_t>(x);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffu;
      h *= 0x100000001b3ull;
    }
  }
  EXPECT_EQ(fnv1a(v), h);
  // Chaining equals hashing the concatenation.
  EXPECT_EQ(fnv1a(std::span(v).subspan(2), fnv1a(std::span(v).first(2))), h);
  EXPECT_EQ(hex64(0xabcull), "0000000000000abc");
}

FlowModel implicit_flow() {
  FlowModel m = testing::alternating_flow(3, 2, LayerKind::kLogisticMixture, {6});
  Rng rng = make_rng(21);
  m.randomize(rng, 0.1);
  return m;
}

TEST(Bench, CellTimesEveryVariantOnOneBatch) {
  const FlowModel m = implicit_flow();
  const GmmTarget target(GmmParams{3, 0.5});
  Rng rng = make_rng(22);
  const RealMatrix x0 = m.base().sample(16, rng);
  const BenchCell cell = bench_cell(m, target, x0, reverse_variants(true), 3, 1);
  EXPECT_EQ(cell.direction, "reverse");
  EXPECT_EQ(cell.baseline, "rev_std");
  EXPECT_EQ(cell.batch_size, 16u);
  ASSERT_EQ(cell.rows.size(), 4u);
  EXPECT_EQ(cell.rows[3].estimator, "rev_path_baseline+autodiff_bisection");
  for (const auto& row : cell.rows) {
    EXPECT_FALSE(row.failed) << row.error;
    EXPECT_GT(row.median, 0.0);
    EXPECT_LE(row.q25, row.median);
    EXPECT_LE(row.median, row.q75);
    EXPECT_EQ(row.input_hash, cell.rows[0].input_hash);
  }
  EXPECT_EQ(cell.rows[0].ratio, 1.0);
  // Sampling-time estimators never invert; the baseline inverts every coordinate of every layer.
  EXPECT_EQ(cell.rows[0].bisection_calls_per_call, 0.0);
  EXPECT_EQ(cell.rows[1].bisection_calls_per_call, 0.0);
  EXPECT_GT(cell.rows[2].bisection_calls_per_call, 0.0);
  EXPECT_EQ(cell.rows[2].bisection_calls_per_call, cell.rows[3].bisection_calls_per_call);
}

class BrokenTarget final : public TargetEnergy {
 public:
  [[nodiscard]] std::size_t dim() const override { return 3; }
  [[nodiscard]] std::string name() const override { return "broken"; }
  [[nodiscard]] double energy(std::span<const double>) const override { throw DomainError("broken"); }
  void energy_gradient(std::span<const double>, std::span<double>) const override { throw DomainError("broken"); }
};

TEST(Bench, FailingVariantsAreReportedNotThrown) {
  const FlowModel m = implicit_flow();
  Rng rng = make_rng(23);
  const RealMatrix x0 = m.base().sample(4, rng);
  BenchReport rep;
  rep.cells.push_back(bench_cell(m, BrokenTarget{}, x0, {{EstimatorTag::kRevStd}, {EstimatorTag::kRevPathFast}}, 2, 0));
  const auto& rows = rep.cells[0].rows;
  EXPECT_TRUE(rows[0].failed);
  EXPECT_TRUE(rows[1].failed);
  EXPECT_TRUE(std::isnan(rows[1].ratio));
  const nlohmann::json j = bench_to_json(rep);
  EXPECT_EQ(j.at("format"), "pathflow-bench");
  const auto& row = j.at("cells")[0].at("rows")[0];
  EXPECT_TRUE(row.at("ratio").is_null());
  EXPECT_EQ(row.at("error"), "broken");
  EXPECT_THROW((void)bench_cell(m, BrokenTarget{}, x0, {}, 2, 0), UsageError);
}

TEST(Bench, ReportCoversEveryBatchSizeAndDirection) {
  ExperimentConfig c = preset("implicit_demo");
  c.bench.batch_sizes = {8, 32};
  c.bench.repetitions = 2;
  c.bench.warmup = 0;
  c.bench.large_batch = false;
  const BenchReport r = run_bench(c);
  EXPECT_TRUE(r.implicit);
  ASSERT_EQ(r.cells.size(), 4u);
  EXPECT_EQ(r.cells[0].direction, "reverse");
  EXPECT_EQ(r.cells[1].direction, "forward");
  EXPECT_EQ(r.cells[1].baseline, "fwd_mle");
  EXPECT_EQ(r.cells[2].batch_size, 32u);
  const nlohmann::json j = bench_to_json(r);
  EXPECT_EQ(j.at("cells").size(), 4u);
  EXPECT_EQ(j.at("flow").at("params"), r.params);
}

// --- gradcheck -------------------------------------------------------------------------------

GradcheckOptions small_options() {
  GradcheckOptions o;
  o.seed = 5;
  o.flows = 4;
  o.dims = {2, 5};
  o.batch = 8;
  return o;
}

TEST(Gradcheck, RandomFlowsRespectTheOptions) {
  Rng rng = make_rng(24);
  RandomFlowOptions o;
  o.min_layers = 2;
  o.max_layers = 4;
  o.allow_implicit = false;
  for (int i = 0; i < 20; ++i) {
    const FlowModel m = random_flow(rng, 5, o);
    EXPECT_FALSE(m.has_implicit_layers());
    std::size_t couplings = 0;
    for (const auto& l : m.layers()) couplings += l.kind() != LayerKind::kScale;
    EXPECT_GE(couplings, 2u);
    EXPECT_LE(couplings, 4u);
  }
  EXPECT_THROW((void)random_flow(rng, 1), ConfigError);
}

TEST(Gradcheck, AllSuitesPass) {
  const GradcheckReport r = run_gradcheck(small_options());
  ASSERT_EQ(r.suites.size(), 4u);
  for (const auto& s : r.suites) {
    EXPECT_TRUE(s.passed()) << s.name;
    for (const auto& c : s.checks) EXPECT_GT(c.evaluations, 0u) << c.name;
  }
  EXPECT_TRUE(r.passed());
  const nlohmann::json j = gradcheck_to_json(r);
  EXPECT_EQ(j.at("passed"), true);
  EXPECT_EQ(j.at("seed"), 5);
  EXPECT_EQ(j.at("suites")[1].at("name"), "coupling_recursion");
}

TEST(Gradcheck, CorruptRecursionIsCaught) {
  GradcheckOptions o = small_options();
  o.corrupt_recursion = true;
  const GradcheckReport r = run_gradcheck(o);
  EXPECT_FALSE(r.passed());
  EXPECT_FALSE(r.find("coupling_recursion")->passed());
  EXPECT_FALSE(r.find("finite_difference")->find("G_vs_fd_log_density")->passed());
  EXPECT_GT(r.find("coupling_recursion")->find("fast_G_vs_dense_coupling")->worst, 1e-3);
}

TEST(Gradcheck, ToleranceOverrideAppliesToUpperBoundsOnly) {
  GradcheckOptions o = small_options();
  o.flows = 2;
  o.tolerance_override = 1e-300;
  const GradcheckReport tight = run_gradcheck(o);
  EXPECT_FALSE(tight.find("cross_estimator")->passed());
  EXPECT_EQ(tight.find("sticking_the_landing")->find("rev_std_norm_floor")->tolerance, 1e-3);
  o.tolerance_override = 1e6;
  o.corrupt_recursion = true;
  EXPECT_TRUE(run_gradcheck(o).find("coupling_recursion")->passed());
}

TEST(Gradcheck, SameSeedSameReport) {
  const auto a = gradcheck_to_json(run_gradcheck(small_options()));
  const auto b = gradcheck_to_json(run_gradcheck(small_options()));
  EXPECT_EQ(a, b);
  GradcheckOptions o = small_options();
  o.batch = 1;
  EXPECT_THROW((void)run_gradcheck(o), ConfigError);
}

}  // namespace
}  // namespace pathflow
