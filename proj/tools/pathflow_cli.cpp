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


// pathflow: train, bench, gradcheck and plotdata subcommands.
//
// Exit codes: 0 success, 1 run failure or failed check, 2 invalid usage or config.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <pathflow/pathflow.hpp>

namespace fs = std::filesystem;
using namespace pathflow;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct CommonArgs {
  std::string config;
  std::string preset;
  std::string out;
  std::optional<std::uint64_t> seed;
};

ExperimentConfig load_config(const CommonArgs& a) {
  if (!a.config.empty() && !a.preset.empty()) throw UsageError("--config and --preset are mutually exclusive");
  ExperimentConfig c;
  if (!a.config.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(a.config));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    c = config_from_json(j);
  } else if (!a.preset.empty()) {
    c = preset(a.preset);
  } else {
    throw UsageError("one of --config or --preset is required");
  }
  if (a.seed) c.seed = *a.seed;
  validate(c);
  return c;
}

std::string percent(double v) {
  if (!std::isfinite(v)) return "   n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%5.1f%%", 100.0 * v);
  return buf;
}

nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

// Closed-form KL(q || p) for a lone scale layer on a standard normal target.
std::optional<double> scale_flow_kl(const ExperimentConfig& c, const FlowModel& m) {
  if (c.target.kind != "normal" || m.layer_count() != 1 || m.layers()[0].kind() != LayerKind::kScale) {
    return std::nullopt;
  }
  const double s2 = m.params()[0] * m.params()[0];
  return 0.5 * static_cast<double>(m.dim()) * (s2 - 1.0 - std::log(s2));
}

int cmd_train(const CommonArgs& a) {
  const ExperimentConfig c = load_config(a);
  const fs::path out = a.out.empty() ? fs::path("run") : fs::path(a.out);
  fs::create_directories(out);
  write_file_atomic(out / "config.echo", config_to_json(c).dump(2) + "\n");

  const auto target = build_target(c.target);
  FlowModel model = build_model(c);
  const TrainData data = build_data(c, *target);
  TrainConfig tc = effective_train_config(c);
  tc.checkpoint_path = out / "best_checkpoint.json";

  HistoryWriter writer(out / "history.csv");
  nlohmann::json final_doc = {{"format", "pathflow-final"}, {"version", 1}, {"name", c.name}, {"seed", c.seed}};
  auto on_record = [&](const TrainRecord& r) {
    writer.append(r);
    std::cout << "step " << r.step << "  ESS_q " << percent(r.ess_q) << "  ESS_p " << percent(r.ess_p)
              << "  ELBO " << format_real(r.elbo) << "\n";
  };

  TrainHistory h;
  int code = 0;
  try {
    h = train(model, *target, tc, data, on_record);
    final_doc["status"] = "completed";
  } catch (const TrainingAborted& e) {
    h = e.history();
    final_doc["status"] = "failed";
    final_doc["error"] = e.what();
    code = kExitFailure;
  } catch (const std::exception& e) {
    final_doc["status"] = "failed";
    final_doc["error"] = e.what();
    code = kExitFailure;
  }

  save_checkpoint(out / "final_checkpoint.json", model, h.records.empty() ? 0 : h.records.back().step,
                  h.records.empty() ? kNotAvailable : h.records.back().ess_q);
  if (!h.records.empty()) {
    const TrainRecord& r = h.records.back();
    final_doc["step"] = r.step;
    final_doc["ess_q"] = num(r.ess_q);
    final_doc["ess_p"] = num(r.ess_p);
    final_doc["elbo"] = num(r.elbo);
    final_doc["nll_train"] = num(r.nll_train);
    final_doc["nll_test"] = num(r.nll_test);
  }
  final_doc["best_step"] = h.best_step;
  final_doc["best_metric"] = num(h.best_metric);
  final_doc["skipped_updates"] = h.skipped_updates;
  final_doc["estimator_attempts"] = h.attempts;
  final_doc["estimator_failures"] = h.failures;
  if (const auto kl = scale_flow_kl(c, model)) final_doc["kl_closed_form"] = *kl;
  write_file_atomic(out / "final.json", final_doc.dump(2) + "\n");
  if (code != 0) std::cerr << "training failed: " << final_doc["error"].get<std::string>() << "\n";
  return code;
}

int cmd_bench(const CommonArgs& a) {
  const ExperimentConfig c = load_config(a);
  const fs::path out = a.out.empty() ? fs::path("bench") : fs::path(a.out);
  fs::create_directories(out);
  const BenchReport rep = run_bench(c);
  write_file_atomic(out / "bench.json", bench_to_json(rep).dump(2) + "\n");
  for (const auto& cell : rep.cells) {
    std::cout << "batch " << cell.batch_size << " (" << cell.direction << ", baseline " << cell.baseline << ")\n";
    for (const auto& r : cell.rows) {
      char line[256];
      if (r.failed) {
        std::snprintf(line, sizeof line, "  %-40s FAILED: %s\n", r.estimator.c_str(), r.error.c_str());
      } else {
        std::snprintf(line, sizeof line, "  %-40s median %.4fs  iqr %.4fs  ratio %.2f  bisections/call %.0f\n",
                      r.estimator.c_str(), r.median, r.iqr(), r.ratio, r.bisection_calls_per_call);
      }
      std::cout << line;
    }
  }
  return 0;
}

int cmd_gradcheck(const CommonArgs& a, double tol, bool corrupt) {
  GradcheckOptions o;
  if (!a.config.empty() || !a.preset.empty()) {
    const ExperimentConfig c = load_config(a);
    o.seed = c.seed;
    o.flows = c.gradcheck.flows;
    o.dims = c.gradcheck.dims;
    o.batch = c.gradcheck.batch;
    o.tolerance_override = c.gradcheck.tolerance;
  } else {
    o.seed = a.seed ? *a.seed : std::random_device{}();
  }
  if (tol < 0.0) throw UsageError("--tol must be positive");
  if (tol > 0.0) o.tolerance_override = tol;
  o.corrupt_recursion = corrupt;

  const GradcheckReport rep = run_gradcheck(o);
  std::cout << "seed " << rep.seed << "\n";
  for (const auto& s : rep.suites) {
    for (const auto& ch : s.checks) {
      char line[256];
      std::snprintf(line, sizeof line, "%-4s %-22s %-34s %s %.3e (%s %.1e)\n", ch.passed() ? "PASS" : "FAIL",
                    s.name.c_str(), ch.name.c_str(), ch.kind == CheckKind::kUpperBound ? "worst" : "min  ", ch.worst,
                    ch.kind == CheckKind::kUpperBound ? "tol" : "floor", ch.tolerance);
      std::cout << line;
    }
  }
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_file_atomic(fs::path(a.out) / "gradcheck.json", gradcheck_to_json(rep).dump(2) + "\n");
  }
  if (!rep.passed()) {
    std::cout << "failed suites:";
    for (const auto& s : rep.suites) {
      if (!s.passed()) std::cout << ' ' << s.name;
    }
    std::cout << "\n";
    return kExitFailure;
  }
  return 0;
}

int cmd_plotdata(const std::string& run_dir) {
  for (const auto& p : write_plot_data(run_dir)) std::cout << p.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Normalizing flows with fast path-gradient estimators"};
  app.require_subcommand(1);

  CommonArgs common;
  std::uint64_t seed = 0;
  double tol = 0.0;
  bool corrupt = false;
  std::string run_dir;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--preset", common.preset, "named preset")->check(CLI::IsMember(preset_names()));
    sub->add_option("--out", common.out, "output directory");
    sub->add_option("--seed", seed, "RNG seed");
  };
  auto* train_cmd = app.add_subcommand("train", "train a flow and write history, checkpoints and final metrics");
  add_common(train_cmd);
  auto* bench_cmd = app.add_subcommand("bench", "time the gradient estimators");
  add_common(bench_cmd);
  auto* grad_cmd = app.add_subcommand("gradcheck", "run the gradient oracle suites");
  add_common(grad_cmd);
  grad_cmd->add_option("--tol", tol, "replace every error tolerance");
  grad_cmd->add_flag("--corrupt-recursion", corrupt, "test hook: break the coupling recursion");
  auto* plot_cmd = app.add_subcommand("plotdata", "write plot TSVs from a run directory's history.csv");
  plot_cmd->add_option("run_dir", run_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  for (auto* sub : {train_cmd, bench_cmd, grad_cmd}) {
    if (sub->parsed() && sub->count("--seed") > 0) common.seed = seed;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(common);
    if (bench_cmd->parsed()) return cmd_bench(common);
    if (grad_cmd->parsed()) return cmd_gradcheck(common, tol, corrupt);
    if (plot_cmd->parsed()) return cmd_plotdata(run_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
