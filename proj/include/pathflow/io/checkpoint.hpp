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


#ifndef PATHFLOW_IO_CHECKPOINT_HPP
#define PATHFLOW_IO_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include <nlohmann/json.hpp>

#include <pathflow/error.hpp>
#include <pathflow/flows/model.hpp>
#include <pathflow/numerics/mlp.hpp>
#include <pathflow/targets/base_density.hpp>

/**
 * \file
 * \brief Self-describing JSON documents for architectures and checkpoints.
 *
 * A checkpoint is
 *
 *   {"format": "pathflow-checkpoint", "version": 1, "architecture": {...},
 *    "params": [...], "step": n, "metric": value}
 *
 * Doubles are written by nlohmann::json with round-trip precision.
 */

namespace pathflow {

inline constexpr int kCheckpointVersion = 1;

[[nodiscard]] inline nlohmann::json base_to_json(const BaseDensity& b) {
  if (b.kind == BaseDensity::Kind::kStandardNormal) return {{"kind", "standard_normal"}, {"dim", b.dim}};
  return {{"kind", "uniform"}, {"dim", b.dim}, {"low", b.low}, {"high", b.high}};
}

[[nodiscard]] inline BaseDensity base_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  const auto dim = j.at("dim").get<std::size_t>();
  if (kind == "standard_normal") return BaseDensity::standard_normal(dim);
  if (kind == "uniform") return BaseDensity::uniform(dim, j.at("low").get<double>(), j.at("high").get<double>());
  throw ConfigError("unknown base density '" + kind + "'");
}

[[nodiscard]] inline nlohmann::json architecture_to_json(const FlowArchitecture& a) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : a.layers) {
    layers.push_back({{"kind", to_string(l.kind)},
                      {"trans", l.trans},
                      {"hidden", l.hidden},
                      {"activation", to_string(l.activation)},
                      {"weight_norm", l.weight_norm},
                      {"mixture_size", l.mixture_size}});
  }
  return {{"dim", a.dim}, {"base", base_to_json(a.base)}, {"layers", layers}};
}

[[nodiscard]] inline FlowArchitecture architecture_from_json(const nlohmann::json& j) {
  try {
    FlowArchitecture a;
    a.dim = j.at("dim").get<std::size_t>();
    a.base = base_from_json(j.at("base"));
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.kind = parse_layer_kind(lj.at("kind").get<std::string>());
      l.trans = lj.at("trans").get<std::vector<std::uint32_t>>();
      l.hidden = lj.at("hidden").get<std::vector<std::size_t>>();
      l.activation = parse_activation(lj.at("activation").get<std::string>());
      l.weight_norm = lj.at("weight_norm").get<bool>();
      l.mixture_size = lj.at("mixture_size").get<std::size_t>();
      a.layers.push_back(std::move(l));
    }
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed architecture: ") + e.what());
  }
}

/// Writes `text` to `path` through a temporary file in the same directory and a rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) throw ConfigError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

[[nodiscard]] inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Checkpoint {
  FlowArchitecture architecture;
  RealVector params;
  std::size_t step = 0;
  double metric = 0.0;
};

[[nodiscard]] inline nlohmann::json checkpoint_to_json(const FlowModel& model, std::size_t step, double metric) {
  return {{"format", "pathflow-checkpoint"},
          {"version", kCheckpointVersion},
          {"architecture", architecture_to_json(model.architecture())},
          {"params", RealVector(model.params().begin(), model.params().end())},
          {"step", step},
          {"metric", metric}};
}

inline void save_checkpoint(const std::filesystem::path& path, const FlowModel& model, std::size_t step,
                            double metric) {
  write_file_atomic(path, checkpoint_to_json(model, step, metric).dump(1) + "\n");
}

[[nodiscard]] inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object() || j.value("format", "") != "pathflow-checkpoint") {
    throw ConfigError("not a pathflow checkpoint");
  }
  if (j.value("version", 0) != kCheckpointVersion) throw ConfigError("unsupported checkpoint version");
  Checkpoint c;
  c.architecture = architecture_from_json(j.at("architecture"));
  try {
    c.params = j.at("params").get<RealVector>();
    c.step = j.at("step").get<std::size_t>();
    // JSON has no NaN; a non-finite metric is stored as null.
    const auto& m = j.at("metric");
    c.metric = m.is_number() ? m.get<double>() : std::numeric_limits<double>::quiet_NaN();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed checkpoint: " + std::string(e.what()));
  }
  return c;
}

/// Rebuilds the model stored in a checkpoint.
[[nodiscard]] inline FlowModel model_from_checkpoint(const Checkpoint& c) {
  FlowModel m(c.architecture);
  m.set_params(c.params);
  return m;
}

}  // namespace pathflow

#endif
