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


#ifndef PATHFLOW_IO_HISTORY_HPP
#define PATHFLOW_IO_HISTORY_HPP

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <pathflow/error.hpp>
#include <pathflow/io/checkpoint.hpp>
#include <pathflow/training.hpp>

/**
 * \file
 * \brief history.csv writer and the plot-data TSV projection.
 *
 * history.csv is comma separated with a fixed header (kHistoryColumns). Reals use
 * "%.17g"; unavailable values are written as "nan". The plot files copy fields
 * from history.csv byte for byte, so they never reformat a number.
 */

namespace pathflow {

inline constexpr int kHistorySchemaVersion = 1;

inline constexpr std::array<std::string_view, 12> kHistoryColumns = {
    "step", "lr", "loss", "ess_q", "ess_p", "nll_train", "nll_test", "elbo",
    "grad_norm_mean", "grad_norm_std", "failures", "wall_time"};

struct PlotFile {
  std::string_view file;
  std::vector<std::string_view> columns;
};

/// The three plot families. Every column is also a history column.
inline const std::vector<PlotFile>& plot_files() {
  static const std::vector<PlotFile> files = {
      {"ess.tsv", {"step", "ess_q", "ess_p"}},
      {"grad_norm.tsv", {"step", "grad_norm_mean", "grad_norm_std"}},
      {"nll.tsv", {"step", "nll_train", "nll_test"}},
  };
  return files;
}

[[nodiscard]] inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[nodiscard]] inline std::string history_header() {
  std::string s;
  for (std::size_t i = 0; i < kHistoryColumns.size(); ++i) {
    if (i) s += ',';
    s += kHistoryColumns[i];
  }
  return s;
}

[[nodiscard]] inline std::string history_row(const TrainRecord& r) {
  std::ostringstream os;
  os << r.step << ',' << format_real(r.lr) << ',' << format_real(r.loss) << ',' << format_real(r.ess_q) << ','
     << format_real(r.ess_p) << ',' << format_real(r.nll_train) << ',' << format_real(r.nll_test) << ','
     << format_real(r.elbo) << ',' << format_real(r.grad_norm_mean) << ',' << format_real(r.grad_norm_std) << ','
     << r.failures << ',' << format_real(r.wall_time);
  return os.str();
}

/// Appends rows as they arrive and flushes after each one, so a crashed run keeps its prefix.
class HistoryWriter {
 public:
  explicit HistoryWriter(const std::filesystem::path& path) : out_{path, std::ios::trunc} {
    if (!out_) throw Error("cannot open " + path.string());
    out_ << history_header() << '\n';
    out_.flush();
  }

  void append(const TrainRecord& r) {
    out_ << history_row(r) << '\n';
    out_.flush();
    if (!out_) throw Error("failed writing history");
  }

 private:
  std::ofstream out_;
};

namespace detail {

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t p = line.find(sep, start);
    out.push_back(line.substr(start, p - start));
    if (p == std::string::npos) return out;
    start = p + 1;
  }
}

}  // namespace detail

/// Writes the plot TSVs for the history.csv in `run_dir`. Returns the files written.
inline std::vector<std::filesystem::path> write_plot_data(const std::filesystem::path& run_dir) {
  const auto hist = run_dir / "history.csv";
  std::ifstream in(hist);
  if (!in) throw UsageError("no history.csv in " + run_dir.string());
  std::string line;
  if (!std::getline(in, line)) throw UsageError("history.csv is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != history_header()) throw UsageError("history.csv header does not match schema version 1");

  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = detail::split(line, ',');
    if (fields.size() != kHistoryColumns.size()) throw UsageError("malformed history.csv row: " + line);
    rows.push_back(std::move(fields));
  }

  auto column_index = [](std::string_view name) {
    for (std::size_t i = 0; i < kHistoryColumns.size(); ++i) {
      if (kHistoryColumns[i] == name) return i;
    }
    throw Error("unknown history column");
  };

  std::vector<std::filesystem::path> written;
  for (const auto& pf : plot_files()) {
    std::vector<std::size_t> idx;
    std::string text;
    for (std::size_t c = 0; c < pf.columns.size(); ++c) {
      idx.push_back(column_index(pf.columns[c]));
      if (c) text += '\t';
      text += pf.columns[c];
    }
    text += '\n';
    for (const auto& r : rows) {
      for (std::size_t c = 0; c < idx.size(); ++c) {
        if (c) text += '\t';
        text += r[idx[c]];
      }
      text += '\n';
    }
    const auto path = run_dir / std::string(pf.file);
    write_file_atomic(path, text);
    written.push_back(path);
  }
  return written;
}

}  // namespace pathflow

#endif
