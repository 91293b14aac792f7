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

#ifndef EFQAT_TRAINER_HPP_
#define EFQAT_TRAINER_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "efqat/dataset.hpp"
#include "efqat/freeze.hpp"
#include "efqat/model.hpp"
#include "efqat/optim.hpp"
#include "efqat/quantizer.hpp"

namespace efqat {

enum class TrainMode { kFp, kFpPlus1, kPtq, kQat, kEfqatCwpl, kEfqatCwpn, kEfqatLwpn };

const char* to_string(TrainMode m);
TrainMode parse_train_mode(const std::string& s);
bool is_efqat(TrainMode m) noexcept;
/// Modes whose forward pass is fake-quantized.
bool is_quantized(TrainMode m) noexcept;
FreezeMode freeze_mode_of(TrainMode m);

struct TrainConfig {
  TrainMode mode = TrainMode::kEfqatCwpn;
  double ratio = 0.25;
  std::uint64_t freeze_freq = 4096;  // samples between refreshes; 0 never refreshes
  std::size_t epochs = 1;
  std::size_t batch_size = 64;
  SgdConfig sgd;
  AdamConfig adam;
  ScaleTransform qparam_transform = ScaleTransform::kRaw;
  std::size_t calib_size = 512;
  std::uint64_t seed = 1;
  bool import_optimizer_state = false;
  std::size_t max_steps = 0;  // per epoch; 0 runs the whole epoch
  bool check_macs = true;     // reconcile live counters against the cost model every step
};

struct MetricsRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::uint64_t samples = 0;
  double loss = 0.0;
  std::optional<double> eval_accuracy;
  double frozen_fraction = 0.0;
  std::uint64_t theoretical_bwd_macs = 0;
  std::uint64_t measured_bwd_macs = 0;
  double bwd_seconds = 0.0;
  bool refreshed = false;
};

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
  std::size_t samples = 0;
};

struct EpochSummary {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  std::uint64_t samples = 0;
  double mean_loss = 0.0;
  std::size_t refreshes = 0;
  double bwd_seconds = 0.0;
  std::uint64_t theoretical_bwd_macs = 0;
  std::uint64_t measured_bwd_macs = 0;
  std::optional<EvalResult> eval;
};

/// MinMax calibration: per-channel symmetric weight params and per-tensor
/// asymmetric input params for every quantized layer, observed on the
/// full-precision eval-mode forward. Weights are untouched. Returns warnings.
std::vector<std::string> calibrate(Model& model, const Dataset& calib, ScaleTransform transform = ScaleTransform::kRaw,
                                   std::size_t batch = 256);
/// The first `n` samples of a seeded permutation of `data`.
Dataset calibration_subset(const Dataset& data, std::size_t n, std::uint64_t seed);

/// Deterministic evaluation; fake-quantized when `quantize` and the model has
/// quantizers. Leaves the model unchanged.
EvalResult evaluate(Model& model, const Dataset& data, bool quantize, std::size_t batch = 256);

class Trainer {
 public:
  using Sink = std::function<void(const MetricsRecord&)>;
  /// Called after each optimizer step, before any plan refresh.
  using StepHook = std::function<void(std::size_t step, const Model&, const FreezePlan*)>;

  Trainer(Model& model, TrainConfig cfg);

  EpochSummary train_epoch(const Dataset& train, const Dataset* eval = nullptr);

  void set_sink(Sink sink) { sink_ = std::move(sink); }
  void set_step_hook(StepHook hook) { hook_ = std::move(hook); }

  const TrainConfig& config() const noexcept { return cfg_; }
  const FreezePlan* plan() const noexcept { return plan_ ? &*plan_ : nullptr; }
  Sgd& sgd() noexcept { return sgd_; }
  Adam& adam() noexcept { return adam_; }
  std::size_t steps() const noexcept { return step_; }
  /// Count of raw scales clamped to kMinScale so far.
  std::size_t scale_clamps() const noexcept { return clamps_; }

 private:
  void optimizer_step();

  Model& model_;
  TrainConfig cfg_;
  std::optional<FreezePlan> plan_;
  Sgd sgd_;
  Adam adam_;
  Sink sink_;
  StepHook hook_;
  std::size_t step_ = 0;
  std::size_t epoch_ = 0;
  std::uint64_t samples_ = 0;
  std::size_t clamps_ = 0;
};

}  // namespace efqat

#endif  // EFQAT_TRAINER_HPP_
