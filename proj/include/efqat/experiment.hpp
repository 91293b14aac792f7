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

// Run orchestration behind the CLI. Each command writes into the configured
// output directory:
//
//   config.json    fully resolved configuration
//   fp.ckpt        FP model when this run had to train one
//   ptq.ckpt       calibrated model (calibrate, and train in quantized modes)
//   final.ckpt     model after training
//   metrics.jsonl  one MetricsRecord per training step
//   summary.json   RunSummary of the command
//   cost.json      cost reports (cost command)
//   plan.txt       final freeze plan (train with dump_plan)

#ifndef EFQAT_EXPERIMENT_HPP_
#define EFQAT_EXPERIMENT_HPP_

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "efqat/checkpoint.hpp"
#include "efqat/config.hpp"
#include "efqat/cost_model.hpp"
#include "efqat/dataset.hpp"
#include "efqat/trainer.hpp"

namespace efqat {

struct RunSummary {
  std::string command;
  std::string mode;
  std::uint64_t seed = 0;
  // Freezing fields: ratio for qat and efqat modes, the rest for efqat only.
  std::optional<double> ratio;
  std::optional<std::uint64_t> freeze_freq;
  /// Samples between refreshes after rounding up to whole batches (0: never).
  std::optional<std::uint64_t> effective_freeze_freq;
  std::optional<double> fp_accuracy;
  std::optional<double> ptq_accuracy;
  std::optional<double> final_accuracy;
  std::optional<double> eval_loss;
  std::optional<double> recorded_accuracy;  // eval: accuracy stored in the checkpoint
  std::optional<double> frozen_fraction;
  double theoretical_speedup = 1.0;
  std::uint64_t theoretical_bwd_macs = 0;
  std::uint64_t measured_bwd_macs = 0;
  double bwd_seconds = 0.0;
  std::size_t steps = 0;
  std::size_t refreshes = 0;
  std::string checkpoint;
  std::string checkpoint_hash;
  std::string parent_hash;
  std::vector<std::string> warnings;
};

std::string summary_to_json(const RunSummary& s);
RunSummary summary_from_json(const std::string& text, const std::string& source = "summary");
std::string metrics_to_json(const MetricsRecord& r);

/// Train/eval split for the configured dataset, validated against the network.
DataSplit load_data(const ExperimentConfig& cfg);

/// One-line difference between two networks, empty when equal.
std::string describe_net_mismatch(const NetSpec& expected, const NetSpec& actual);

class Experiment {
 public:
  /// `log` receives progress lines; nullptr keeps the run quiet.
  explicit Experiment(ExperimentConfig cfg, std::ostream* log = nullptr);

  const ExperimentConfig& config() const noexcept { return cfg_; }

  RunSummary calibrate();
  RunSummary train();
  /// Evaluates cfg.checkpoint, or <out>/final.ckpt when none is configured.
  RunSummary eval();
  /// Reports over the ratio grid {0, 0.05, 0.1, 0.25, 0.5, 1}. With a
  /// checkpoint the plans come from its weights (true popcounts); otherwise
  /// floor(r·C_out) rows per layer. Writes cost.json; returns the tables.
  std::string cost();

 private:
  struct Start {
    Model model;
    std::string hash;
    std::optional<double> fp_accuracy;
    std::optional<double> ptq_accuracy;
    std::vector<std::string> warnings;
  };

  void prepare_out();
  std::string out_path(const std::string& name) const;
  void note(const std::string& line) const;
  Checkpoint load_matching(const std::string& path) const;
  Start full_precision(const DataSplit& data);
  Start quantized(const DataSplit& data);
  Start calibrated(Start fp, const DataSplit& data);
  void write_summary(const RunSummary& s, const std::string& file) const;

  ExperimentConfig cfg_;
  std::ostream* log_;
};

struct PlotDataResult {
  std::size_t rows = 0;
  std::vector<std::string> warnings;
  std::string accuracy_path;
  std::string speedup_path;
};

/// Collects summary.json from each run directory into
/// accuracy_vs_ratio.csv and speedup_vs_ratio.csv under `out_dir`.
PlotDataResult write_plot_data(const std::vector<std::string>& run_dirs, const std::string& out_dir);

inline constexpr const char* kAccuracyCsvHeader = "mode,ratio,freeze_freq,seed,fp_accuracy,ptq_accuracy,final_accuracy";
inline constexpr const char* kSpeedupCsvHeader =
    "mode,ratio,seed,theoretical_speedup,theoretical_bwd_macs,measured_bwd_macs,bwd_seconds";

}  // namespace efqat

#endif  // EFQAT_EXPERIMENT_HPP_
