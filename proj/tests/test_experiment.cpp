// Copyright 2026 The efqat Authors. All Rights Reserved.
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


#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "efqat/error.hpp"
#include "efqat/experiment.hpp"

using namespace efqat;
namespace fs = std::filesystem;

namespace {

std::string scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("efqat_test_" + name);
  fs::remove_all(p);
  return p.string();
}

ExperimentConfig tiny(const std::string& out) {
  ExperimentConfig c;
  c.out = out;
  c.net = NetSpec::reference_cnn(8, 4, 8);
  c.data.synthetic.classes = 4;
  c.data.synthetic.shape = {1, 8, 8};
  c.data.synthetic.train_size = 128;
  c.data.synthetic.eval_size = 64;
  c.pretrain.epochs = 1;
  c.train.batch_size = 32;
  c.train.calib_size = 64;
  c.train.freeze_freq = 64;
  return c;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("train writes the run layout and a linked hash chain") {
  const std::string out = scratch("layout");
  ExperimentConfig c = tiny(out);
  c.dump_plan = true;
  const RunSummary r = Experiment(c).train();
  for (const char* f : {"config.json", "fp.ckpt", "ptq.ckpt", "final.ckpt", "metrics.jsonl", "summary.json", "plan.txt"})
    CHECK(fs::exists(fs::path(out) / f));
  CHECK(r.mode == "efqat-cwpn");
  CHECK(r.steps == 4);
  CHECK(r.refreshes == 2);
  CHECK(r.effective_freeze_freq == 64u);
  CHECK(r.theoretical_bwd_macs == r.measured_bwd_macs);
  CHECK(r.parent_hash == file_hash(out + "/ptq.ckpt"));
  CHECK(load_checkpoint(out + "/ptq.ckpt").meta.parent_hash == file_hash(out + "/fp.ckpt"));
  CHECK(r.checkpoint_hash == file_hash(out + "/final.ckpt"));
  const RunSummary back = summary_from_json(slurp(out + "/summary.json"));
  CHECK(back.checkpoint_hash == r.checkpoint_hash);
  CHECK(back.frozen_fraction == r.frozen_fraction);
  CHECK(parse_config(slurp(out + "/config.json")).train.freeze_freq == 64u);

  std::ifstream lines(out + "/metrics.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) ++n;
  CHECK(n == 4);

  ExperimentConfig e = c;
  e.out = scratch("layout_eval");
  CHECK_THROWS_AS(Experiment(e).eval(), IoError);  // no final.ckpt under e.out
  e.checkpoint = r.checkpoint;
  const RunSummary ev2 = Experiment(e).eval();
  CHECK(ev2.final_accuracy == ev2.recorded_accuracy);
}

TEST_CASE("same seed reproduces every checkpoint hash") {
  const RunSummary a = Experiment(tiny(scratch("seed_a"))).train();
  const RunSummary b = Experiment(tiny(scratch("seed_b"))).train();
  CHECK(a.checkpoint_hash == b.checkpoint_hash);
  CHECK(a.parent_hash == b.parent_hash);
  CHECK(a.final_accuracy == b.final_accuracy);
}

TEST_CASE("fp+1 continues a checkpoint without quantization fields") {
  const std::string base = scratch("fp_base");
  ExperimentConfig c = tiny(base);
  c.train.mode = TrainMode::kFp;
  const RunSummary fp = Experiment(c).train();
  CHECK(!fp.ratio);

  ExperimentConfig next = tiny(scratch("fp_plus"));
  next.train.mode = TrainMode::kFpPlus1;
  next.checkpoint = fp.checkpoint;
  const RunSummary r = Experiment(next).train();
  CHECK(r.parent_hash == fp.checkpoint_hash);
  CHECK(!r.ratio);
  CHECK(!r.freeze_freq);
  CHECK(!r.ptq_accuracy);
  CHECK(!r.frozen_fraction);
  CHECK(r.theoretical_speedup == 1.0);
  CHECK(!load_checkpoint(r.checkpoint).model.quantized());
  CHECK(slurp(next.out + "/summary.json").find("\"ratio\"") == std::string::npos);
}

TEST_CASE("calibrate on one sample warns") {
  ExperimentConfig c = tiny(scratch("calib1"));
  c.train.calib_size = 1;
  const RunSummary r = Experiment(c).calibrate();
  CHECK(r.command == "calibrate");
  REQUIRE(!r.warnings.empty());
  CHECK(r.warnings[0].find("single sample") != std::string::npos);
  CHECK(r.ptq_accuracy);
}

TEST_CASE("checkpoints for a different network are rejected by name") {
  const RunSummary r = Experiment(tiny(scratch("net_a"))).calibrate();
  ExperimentConfig other = tiny(scratch("net_b"));
  other.net = NetSpec::reference_cnn(8, 4, 16);
  other.checkpoint = r.checkpoint;
  try {
    Experiment(other).eval();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("does not match the configured network") != std::string::npos);
  }
  other.net = tiny("").net;
  other.net.bits_w = 6;
  CHECK_THROWS_AS(Experiment(other).train(), ConfigError);
}

TEST_CASE("cost writes reports for the ratio grid") {
  const std::string out = scratch("cost");
  const std::string tables = Experiment(tiny(out)).cost();
  CHECK(tables.find("speedup 2.0000") != std::string::npos);
  const std::string j = slurp(out + "/cost.json");
  CHECK(j.find("\"reports\"") != std::string::npos);
  CHECK(j.find("\"ratio\": 0.05") != std::string::npos);
}

TEST_CASE("plot-data collects training runs") {
  const std::string plots = scratch("plots");
  const PlotDataResult empty = write_plot_data({}, plots);
  CHECK(empty.rows == 0);
  CHECK(empty.warnings.size() == 1);
  CHECK(slurp(empty.accuracy_path) == std::string(kAccuracyCsvHeader) + "\n");
  CHECK(slurp(empty.speedup_path) == std::string(kSpeedupCsvHeader) + "\n");

  const std::string run = scratch("plot_run");
  ExperimentConfig c = tiny(run);
  c.train.ratio = 0.5;
  Experiment(c).train();
  const std::string calib = scratch("plot_calib");
  Experiment(tiny(calib)).calibrate();
  const PlotDataResult res = write_plot_data({run, calib, scratch("plot_missing")}, plots);
  CHECK(res.rows == 1);
  CHECK(res.warnings.size() == 2);
  const std::string acc = slurp(res.accuracy_path);
  CHECK(acc.find("efqat-cwpn,0.500000,64,1,") != std::string::npos);
}
