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
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "test_support.hpp"

namespace pathflow {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_{fs::temp_directory_path() / name} {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  [[nodiscard]] const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

FlowModel mixed_model() {
  FlowArchitecture a;
  a.dim = 4;
  a.base = BaseDensity::standard_normal(4);
  a.layers.push_back(testing::coupling_spec(LayerKind::kAffine, alternating_mask(4, 0)));
  a.layers.push_back(testing::coupling_spec(LayerKind::kLogisticMixture, alternating_mask(4, 1), {6, 5}, 3, true));
  a.layers.push_back(testing::coupling_spec(LayerKind::kAffine, alternating_mask(4, 2)));
  LayerSpec scale;
  scale.kind = LayerKind::kScale;
  a.layers.push_back(scale);
  FlowModel m(std::move(a));
  Rng rng = make_rng(11);
  m.randomize(rng, 0.3);
  return m;
}

// --- checkpoints -------------------------------------------------------------------------

TEST(Checkpoint, RoundTripIsExact) {
  TempDir dir("pathflow_io_ckpt");
  const FlowModel m = mixed_model();
  save_checkpoint(dir.path() / "c.json", m, 17, 0.625);
  const Checkpoint c = load_checkpoint(dir.path() / "c.json");
  EXPECT_EQ(c.step, 17u);
  EXPECT_EQ(c.metric, 0.625);
  EXPECT_EQ(c.architecture, m.architecture());
  const FlowModel back = model_from_checkpoint(c);
  EXPECT_TRUE(std::ranges::equal(back.params(), m.params()));

  // The rebuilt model computes bitwise identical densities.
  Rng rng = make_rng(12);
  const RealMatrix x0 = m.base().sample(20, rng);
  const FlowBatch a = flow_forward(m, x0);
  const FlowBatch b = flow_forward(back, x0);
  EXPECT_EQ(a.log_q, b.log_q);
  EXPECT_TRUE(std::ranges::equal(a.x.data(), b.x.data()));
  EXPECT_FALSE(fs::exists(dir.path() / "c.json.tmp"));
}

TEST(Checkpoint, NonFiniteMetricReadsBackAsNan) {
  TempDir dir("pathflow_io_nan");
  save_checkpoint(dir.path() / "c.json", testing::scale_flow(2, 1.0), 0, std::nan(""));
  EXPECT_TRUE(std::isnan(load_checkpoint(dir.path() / "c.json").metric));
}

TEST(Checkpoint, MalformedFilesAreRejected) {
  TempDir dir("pathflow_io_bad");
  const auto p = dir.path() / "c.json";
  EXPECT_THROW((void)load_checkpoint(p), ConfigError);

  auto expect_rejected = [&](const std::string& text) {
    write_file_atomic(p, text);
    EXPECT_THROW((void)load_checkpoint(p), ConfigError) << text;
  };
  expect_rejected("{not json");
  expect_rejected("[1, 2]");
  expect_rejected(R"({"format": "something-else", "version": 1})");

  nlohmann::json good = checkpoint_to_json(testing::scale_flow(2, 1.0), 3, 0.5);
  nlohmann::json j = good;
  j["version"] = 9;
  expect_rejected(j.dump());
  j = good;
  j["params"] = "zero";
  expect_rejected(j.dump());
  j = good;
  j.erase("step");
  expect_rejected(j.dump());
  j = good;
  j["architecture"]["layers"][0]["kind"] = "spline";
  expect_rejected(j.dump());

  // A parameter vector of the wrong length is caught when the model is rebuilt.
  j = good;
  j["params"] = RealVector{1.0, 2.0, 3.0};
  write_file_atomic(p, j.dump());
  const Checkpoint c = load_checkpoint(p);
  EXPECT_THROW((void)model_from_checkpoint(c), ConfigError);
}

TEST(Io, AtomicWriteReplacesTheFile) {
  TempDir dir("pathflow_io_atomic");
  const auto p = dir.path() / "f.txt";
  write_file_atomic(p, "first");
  write_file_atomic(p, "second\n");
  EXPECT_EQ(read_file(p), "second\n");
  EXPECT_THROW(write_file_atomic(dir.path() / "missing" / "f.txt", "x"), ConfigError);
}

// --- history -----------------------------------------------------------------------------

TEST(History, FormatRealRoundTrips) {
  EXPECT_EQ(format_real(std::nan("")), "nan");
  EXPECT_EQ(format_real(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(format_real(-std::numeric_limits<double>::infinity()), "-inf");
  EXPECT_EQ(format_real(0.5), "0.5");
  Rng rng = make_rng(13);
  std::normal_distribution<double> normal(0.0, 1e3);
  for (int i = 0; i < 100; ++i) {
    const double v = normal(rng);
    EXPECT_EQ(std::stod(format_real(v)), v);
  }
}

TEST(History, HeaderAndRowsHaveMatchingColumns) {
  EXPECT_EQ(history_header(),
            "step,lr,loss,ess_q,ess_p,nll_train,nll_test,elbo,grad_norm_mean,grad_norm_std,failures,wall_time");
  TrainRecord r;
  r.step = 40;
  r.lr = 1e-3;
  r.loss = 2.0;
  r.ess_q = 0.25;
  r.failures = 3;
  const std::string row = history_row(r);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 11);
  EXPECT_EQ(row.substr(0, 17), "40,0.001,2,0.25,n");
}

TEST(History, WriterFeedsThePlotFiles) {
  TempDir dir("pathflow_io_hist");
  {
    HistoryWriter w(dir.path() / "history.csv");
    for (std::size_t s : {0u, 10u, 20u}) {
      TrainRecord r;
      r.step = s;
      r.ess_q = 0.1 * static_cast<double>(s);
      r.grad_norm_mean = 1.0;
      r.grad_norm_std = 0.5;
      r.nll_train = 3.0;
      w.append(r);
    }
  }
  const auto files = write_plot_data(dir.path());
  ASSERT_EQ(files.size(), 3u);
  EXPECT_EQ(read_file(dir.path() / "ess.tsv"), "step\tess_q\tess_p\n0\t0\tnan\n10\t1\tnan\n20\t2\tnan\n");
  EXPECT_EQ(read_file(dir.path() / "grad_norm.tsv"),
            "step\tgrad_norm_mean\tgrad_norm_std\n0\t1\t0.5\n10\t1\t0.5\n20\t1\t0.5\n");
  EXPECT_EQ(read_file(dir.path() / "nll.tsv"), "step\tnll_train\tnll_test\n0\t3\tnan\n10\t3\tnan\n20\t3\tnan\n");

  // Regenerating gives identical bytes.
  const std::string before = read_file(dir.path() / "ess.tsv");
  (void)write_plot_data(dir.path());
  EXPECT_EQ(read_file(dir.path() / "ess.tsv"), before);
}

TEST(History, PlotDataRejectsBadHistories) {
  TempDir dir("pathflow_io_badhist");
  EXPECT_THROW((void)write_plot_data(dir.path()), UsageError);
  write_file_atomic(dir.path() / "history.csv", "");
  EXPECT_THROW((void)write_plot_data(dir.path()), UsageError);
  write_file_atomic(dir.path() / "history.csv", "step,loss\n0,1\n");
  EXPECT_THROW((void)write_plot_data(dir.path()), UsageError);
  write_file_atomic(dir.path() / "history.csv", history_header() + "\n0,1,2\n");
  EXPECT_THROW((void)write_plot_data(dir.path()), UsageError);
  // Windows line endings are accepted.
  write_file_atomic(dir.path() / "history.csv", history_header() + "\r\n" + history_row(TrainRecord{}) + "\r\n");
  EXPECT_EQ(write_plot_data(dir.path()).size(), 3u);
}

}  // namespace
}  // namespace pathflow
