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


#ifndef PATHFLOW_BENCH_HPP
#define PATHFLOW_BENCH_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include <pathflow/config.hpp>
#include <pathflow/estimators.hpp>
#include <pathflow/flows/flow.hpp>
#include <pathflow/flows/mixture.hpp>
#include <pathflow/parallel.hpp>

/**
 * \file
 * \brief Runtime harness for the gradient estimators.
 *
 * A cell is one batch size and one direction. Every estimator in a cell sees the
 * same parameter snapshot and the same input batch; both are hashed into the row.
 * Repetitions are interleaved across the estimators of a cell so that slow drift
 * of the machine affects them alike. Forward cells use flow samples as the data
 * batch, which is fine for timing.
 */

namespace pathflow {

struct BenchVariant {
  EstimatorTag tag = EstimatorTag::kRevStd;
  bool autodiff_bisection = false;

  [[nodiscard]] std::string name() const {
    return autodiff_bisection ? to_string(tag) + "+autodiff_bisection" : to_string(tag);
  }
};

struct BenchRow {
  std::string estimator;
  double median = 0.0;  ///< seconds per call
  double q25 = 0.0;
  double q75 = 0.0;
  double ratio = 0.0;  ///< median over the cell baseline's median
  double bisection_calls_per_call = 0.0;
  std::string input_hash;
  bool failed = false;
  std::string error;

  [[nodiscard]] double iqr() const { return q75 - q25; }
};

struct BenchCell {
  std::size_t batch_size = 0;
  std::string direction;  ///< reverse | forward
  std::string baseline;
  std::vector<BenchRow> rows;

  [[nodiscard]] const BenchRow* find(const std::string& estimator) const {
    for (const auto& r : rows) {
      if (r.estimator == estimator) return &r;
    }
    return nullptr;
  }
};

struct BenchReport {
  std::string name;
  bool implicit = false;
  std::size_t dim = 0;
  std::size_t layers = 0;
  std::size_t params = 0;
  std::size_t threads = 1;
  std::size_t repetitions = 0;
  std::size_t warmup = 0;
  std::vector<BenchCell> cells;
};

/// 64-bit FNV-1a over the raw bytes of the given doubles.
[[nodiscard]] inline std::uint64_t fnv1a(std::span<const double> v, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = reinterpret_cast<const unsigned char*>(v.data());
  for (std::size_t i = 0; i < v.size_bytes(); ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

[[nodiscard]] inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Linear-interpolated quantile of an unsorted sample.
[[nodiscard]] inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw UsageError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Times `variants` on one batch. The first variant is the baseline of the ratios.
[[nodiscard]] inline BenchCell bench_cell(const FlowModel& model, const TargetEnergy& target, const RealMatrix& batch,
                                          const std::vector<BenchVariant>& variants, std::size_t repetitions,
                                          std::size_t warmup, const EstimatorOptions& base_opt = {}) {
  if (variants.empty() || repetitions == 0) throw UsageError("bench cell needs variants and repetitions");
  BenchCell cell;
  cell.batch_size = batch.rows();
  cell.direction = is_reverse(variants.front().tag) ? "reverse" : "forward";
  cell.baseline = variants.front().name();

  const std::size_t m = variants.size();
  std::vector<std::vector<double>> times(m);
  std::vector<std::uint64_t> bisections(m, 0);
  cell.rows.resize(m);

  auto run = [&](std::size_t v) {
    EstimatorOptions opt = base_opt;
    opt.inverse.differentiate_bisection = variants[v].autodiff_bisection;
    cell.rows[v].input_hash = hex64(fnv1a(batch.data(), fnv1a(model.params())));
    const auto t0 = std::chrono::steady_clock::now();
    const GradEstimate e = estimate_gradient(variants[v].tag, model, target, batch, opt);
    const auto t1 = std::chrono::steady_clock::now();
    (void)e;
    return std::chrono::duration<double>(t1 - t0).count();
  };

  for (std::size_t v = 0; v < m; ++v) cell.rows[v].estimator = variants[v].name();
  for (std::size_t r = 0; r < warmup + repetitions; ++r) {
    for (std::size_t v = 0; v < m; ++v) {
      if (cell.rows[v].failed) continue;
      try {
        const std::uint64_t before = bisection_call_count();
        const double t = run(v);
        if (r >= warmup) {
          times[v].push_back(t);
          bisections[v] += bisection_call_count() - before;
        }
      } catch (const std::exception& ex) {
        cell.rows[v].failed = true;
        cell.rows[v].error = ex.what();
      }
    }
  }

  for (std::size_t v = 0; v < m; ++v) {
    BenchRow& row = cell.rows[v];
    if (row.failed) continue;
    row.median = quantile(times[v], 0.5);
    row.q25 = quantile(times[v], 0.25);
    row.q75 = quantile(times[v], 0.75);
    row.bisection_calls_per_call = static_cast<double>(bisections[v]) / static_cast<double>(times[v].size());
  }
  const BenchRow& base = cell.rows.front();
  for (auto& row : cell.rows) {
    row.ratio = (!row.failed && !base.failed && base.median > 0.0) ? row.median / base.median : kNotAvailable;
  }
  return cell;
}

[[nodiscard]] inline std::vector<BenchVariant> reverse_variants(bool implicit) {
  std::vector<BenchVariant> v = {
      {EstimatorTag::kRevStd}, {EstimatorTag::kRevPathFast}, {EstimatorTag::kRevPathBaseline}};
  if (implicit) v.push_back({EstimatorTag::kRevPathBaseline, true});
  return v;
}

[[nodiscard]] inline std::vector<BenchVariant> forward_variants(bool implicit) {
  std::vector<BenchVariant> v = {{EstimatorTag::kFwdMle}, {EstimatorTag::kFwdPath}, {EstimatorTag::kFwdGdreg}};
  if (implicit) v.push_back({EstimatorTag::kFwdGdreg, true});
  return v;
}

/// Model snapshot used by the bench: the configured architecture with random
/// parameters (output layers at 0.1), so that every layer does real work.
[[nodiscard]] inline FlowModel bench_model(const ExperimentConfig& c) {
  FlowModel m(build_architecture(c));
  Rng rng = make_rng(c.seed, 20);
  m.randomize(rng, 0.1);
  return m;
}

/// Full sweep: every batch size, reverse and forward cells.
[[nodiscard]] inline BenchReport run_bench(const ExperimentConfig& c) {
  const auto target = build_target(c.target);
  const FlowModel model = bench_model(c);
  BenchReport rep;
  rep.name = c.name;
  rep.implicit = model.has_implicit_layers();
  rep.dim = model.dim();
  rep.layers = model.layer_count();
  rep.params = model.param_count();
  rep.threads = thread_count();
  rep.repetitions = c.bench.repetitions;
  rep.warmup = c.bench.warmup;

  EstimatorOptions opt;
  opt.inverse.bisection = c.bisection;
  std::vector<std::size_t> sizes = c.bench.batch_sizes;
  if (c.bench.large_batch) sizes.push_back(8192);
  for (std::size_t b : sizes) {
    Rng rng = make_rng(c.seed, 21 + b);
    const RealMatrix x0 = model.base().sample(b, rng);
    rep.cells.push_back(bench_cell(model, *target, x0, reverse_variants(rep.implicit), c.bench.repetitions,
                                   c.bench.warmup, opt));
    RealMatrix data = flow_forward(model, x0).x;
    rep.cells.push_back(bench_cell(model, *target, data, forward_variants(rep.implicit), c.bench.repetitions,
                                   c.bench.warmup, opt));
  }
  return rep;
}

[[nodiscard]] inline nlohmann::json bench_to_json(const BenchReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : c.rows) {
      nlohmann::json j = {{"estimator", row.estimator},  {"failed", row.failed},
                          {"input_hash", row.input_hash}, {"median_s", num(row.median)},
                          {"q25_s", num(row.q25)},        {"q75_s", num(row.q75)},
                          {"iqr_s", num(row.iqr())},      {"ratio", num(row.ratio)},
                          {"bisection_calls_per_call", row.bisection_calls_per_call}};
      if (row.failed) j["error"] = row.error;
      rows.push_back(std::move(j));
    }
    cells.push_back(
        {{"batch_size", c.batch_size}, {"direction", c.direction}, {"baseline", c.baseline}, {"rows", rows}});
  }
  return {{"format", "pathflow-bench"},
          {"version", 1},
          {"name", r.name},
          {"flow", {{"implicit", r.implicit}, {"dim", r.dim}, {"layers", r.layers}, {"params", r.params}}},
          {"threads", r.threads},
          {"repetitions", r.repetitions},
          {"warmup", r.warmup},
          {"cells", cells}};
}

}  // namespace pathflow

#endif
