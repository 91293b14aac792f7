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

#include "efqat/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "efqat/cost_model.hpp"
#include "efqat/error.hpp"
#include "efqat/rng.hpp"

namespace efqat {

namespace {

struct ModeName {
  TrainMode mode;
  const char* name;
};

constexpr ModeName kModes[] = {
    {TrainMode::kFp, "fp"},
    {TrainMode::kFpPlus1, "fp+1"},
    {TrainMode::kPtq, "ptq"},
    {TrainMode::kQat, "qat"},
    {TrainMode::kEfqatCwpl, "efqat-cwpl"},
    {TrainMode::kEfqatCwpn, "efqat-cwpn"},
    {TrainMode::kEfqatLwpn, "efqat-lwpn"},
};

std::string index_name(int layer, const char* what) { return "layer" + std::to_string(layer) + "." + what; }

}  // namespace

const char* to_string(TrainMode m) {
  for (const auto& e : kModes)
    if (e.mode == m) return e.name;
  return "?";
}

TrainMode parse_train_mode(const std::string& s) {
  for (const auto& e : kModes)
    if (s == e.name) return e.mode;
  throw ConfigError("unknown mode '" + s + "' (expected fp, fp+1, ptq, qat, efqat-cwpl, efqat-cwpn or efqat-lwpn)");
}

bool is_efqat(TrainMode m) noexcept {
  return m == TrainMode::kEfqatCwpl || m == TrainMode::kEfqatCwpn || m == TrainMode::kEfqatLwpn;
}

bool is_quantized(TrainMode m) noexcept { return m == TrainMode::kPtq || m == TrainMode::kQat || is_efqat(m); }

FreezeMode freeze_mode_of(TrainMode m) {
  switch (m) {
    case TrainMode::kEfqatCwpl:
      return FreezeMode::kCwpl;
    case TrainMode::kEfqatCwpn:
      return FreezeMode::kCwpn;
    case TrainMode::kEfqatLwpn:
      return FreezeMode::kLwpn;
    default:
      throw ConfigError(std::string("mode ") + to_string(m) + " has no freezing plan");
  }
}

// ---------------------------------------------------------------------------

Dataset calibration_subset(const Dataset& data, std::size_t n, std::uint64_t seed) {
  if (n == 0 || data.size() == 0) throw ConfigError("calibration set is empty");
  n = std::min(n, data.size());
  Rng rng(seed ^ 0xca11b7a7e5eedULL);
  auto perm = rng.permutation(data.size());
  perm.resize(n);
  Dataset out;
  out.sample_shape = data.sample_shape;
  Tensor x = data.batch_inputs(perm);
  out.features = std::move(x.storage());
  out.labels = data.batch_labels(perm);
  return out;
}

std::vector<std::string> calibrate(Model& model, const Dataset& calib, ScaleTransform transform, std::size_t batch) {
  if (calib.size() == 0) throw ConfigError("calibration set is empty");
  std::vector<std::string> warnings;
  if (calib.size() == 1) {
    warnings.push_back("calibration set has a single sample; activation ranges may be too narrow");
  }
  const NetSpec& net = model.net();
  std::map<int, RangeObserver> observers;
  ForwardOptions opt;
  opt.observers = &observers;
  for (std::size_t begin = 0; begin < calib.size(); begin += batch) {
    const std::size_t count = std::min(batch, calib.size() - begin);
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = begin + i;
    Tape tape;
    model.forward(tape, calib.batch_inputs(idx), opt);
  }
  model.clear_quant();
  for (int id : net.quantized_layers()) {
    QuantLayer q;
    RangeObserver wobs(Granularity::kPerChannel, 0);
    wobs.observe(model.layers()[id].weight->value);
    q.weight = params_from_observer(wobs, net.bits_w, true);
    q.input = params_from_observer(observers.at(id), net.bits_a, false);
    const float lo = observers.at(id).min()[0], hi = observers.at(id).max()[0];
    if (lo == hi) {
      warnings.push_back("layer " + std::to_string(id) + ": calibration saw a constant input " + std::to_string(lo) +
                         "; using unit scale");
    }
    q.weight.set_transform(transform);
    q.input.set_transform(transform);
    q.weight_grad.reset(q.weight.slices());
    q.input_grad.reset(q.input.slices());
    model.quant()[id] = std::move(q);
  }
  return warnings;
}

EvalResult evaluate(Model& model, const Dataset& data, bool quantize, std::size_t batch) {
  if (data.size() == 0) throw ContractError("evaluation set is empty");
  ForwardOptions opt;
  opt.quantize = quantize && model.quantized();
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t begin = 0; begin < data.size(); begin += batch) {
    const std::size_t count = std::min(batch, data.size() - begin);
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = begin + i;
    const std::vector<int> labels = data.batch_labels(idx);
    Tape tape;
    Var logits = model.forward(tape, data.batch_inputs(idx), opt);
    const Tensor& z = logits.value();
    const std::size_t c = z.dim(1);
    for (std::size_t i = 0; i < count; ++i) {
      const float* row = z.data() + i * c;
      const std::size_t pred = static_cast<std::size_t>(std::max_element(row, row + c) - row);
      if (pred == static_cast<std::size_t>(labels[i])) ++correct;
    }
    loss += static_cast<double>(cross_entropy(logits, labels).value()[0]) * static_cast<double>(count);
  }
  return {static_cast<double>(correct) / static_cast<double>(data.size()), loss / static_cast<double>(data.size()),
          data.size()};
}

// ---------------------------------------------------------------------------

Trainer::Trainer(Model& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)), sgd_(cfg_.sgd), adam_(cfg_.adam) {
  if (cfg_.batch_size == 0) throw ConfigError("batch size must be positive");
  if (cfg_.mode == TrainMode::kPtq) throw ConfigError("mode ptq calibrates only and has no training epoch");
  if (is_quantized(cfg_.mode)) {
    if (!model_.quantized()) {
      throw ContractError(std::string("mode ") + to_string(cfg_.mode) +
                          " needs quantization parameters; calibrate or load a PTQ checkpoint first");
    }
    for (auto& [id, q] : model_.quant()) {
      if (q.weight.transform != cfg_.qparam_transform) q.weight.set_transform(cfg_.qparam_transform);
      if (q.input.transform != cfg_.qparam_transform) q.input.set_transform(cfg_.qparam_transform);
    }
  }
  if (is_efqat(cfg_.mode)) {
    plan_ = make_plan(freeze_mode_of(cfg_.mode), model_.net(), model_.weight_set(), cfg_.ratio, cfg_.freeze_freq);
  }
}

void Trainer::optimizer_step() {
  const NetSpec& net = model_.net();
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    LayerState& s = model_.layers()[i];
    const RowMask* rows = plan_ ? plan_->mask(static_cast<int>(i)) : nullptr;
    if (s.weight) sgd_.step(*s.weight, rows);
    for (auto* p : {&s.bias, &s.gamma, &s.beta})
      if (*p) sgd_.step(**p);
  }
  if (!is_quantized(cfg_.mode)) return;
  for (auto& [id, q] : model_.quant()) {
    const RowMask* rows = plan_ ? plan_->mask(id) : nullptr;
    adam_.step(index_name(id, "weight.scale"), q.weight.trainable_scale(), q.weight_grad.scale,
               rows ? &rows->rows : nullptr);
    adam_.step(index_name(id, "input.scale"), q.input.trainable_scale(), q.input_grad.scale);
    adam_.step(index_name(id, "input.zero_point"), q.input.zero_point, q.input_grad.zero_point);
    clamps_ += q.weight.sync_scale();
    clamps_ += q.input.sync_scale();
  }
}

EpochSummary Trainer::train_epoch(const Dataset& train, const Dataset* eval) {
  if (train.size() == 0) throw ConfigError("training set is empty");
  const bool quantized = is_quantized(cfg_.mode);
  ForwardOptions opt;
  opt.training = true;
  opt.quantize = quantized;
  opt.train_qparams = quantized;

  Rng rng(cfg_.seed * 0x100000001b3ULL + epoch_ + 1);
  const std::vector<std::size_t> order = rng.permutation(train.size());
  const FreezePlan dense;  // no masks: every weight layer dense

  EpochSummary sum;
  sum.epoch = epoch_;
  double loss_acc = 0.0;
  for (std::size_t begin = 0; begin < order.size(); begin += cfg_.batch_size) {
    if (cfg_.max_steps && sum.steps >= cfg_.max_steps) break;
    const std::size_t count = std::min(cfg_.batch_size, order.size() - begin);
    const std::span<const std::size_t> idx(order.data() + begin, count);
    const std::vector<int> labels = train.batch_labels(idx);

    model_.zero_grad();
    Tape tape;
    opt.masks = plan_ ? &plan_->masks : nullptr;
    Var logits = model_.forward(tape, train.batch_inputs(idx), opt);
    Var loss = cross_entropy(logits, labels);
    const double loss_value = loss.value()[0];
    if (!std::isfinite(loss_value)) {
      throw DivergenceError("loss is " + std::to_string(loss_value) + " at step " + std::to_string(step_) +
                            " (epoch " + std::to_string(epoch_) + "); aborting");
    }
    const auto t0 = std::chrono::steady_clock::now();
    tape.backward(loss);
    const auto t1 = std::chrono::steady_clock::now();

    OpsReport ops = network_report(model_.net(), plan_ ? *plan_ : dense, count);
    if (cfg_.check_macs) reconcile_or_throw(ops, tape.mac_ledger());
    std::uint64_t measured = 0;
    for (const auto& [layer, tally] : tape.mac_ledger()) measured += tally.backward();

    optimizer_step();
    samples_ += count;

    MetricsRecord rec;
    rec.step = step_;
    rec.epoch = epoch_;
    rec.samples = samples_;
    rec.loss = loss_value;
    rec.frozen_fraction = plan_ ? plan_->frozen_fraction(model_.net()) : 0.0;
    rec.theoretical_bwd_macs = ops.total;
    rec.measured_bwd_macs = measured;
    rec.bwd_seconds = std::chrono::duration<double>(t1 - t0).count();
    if (hook_) hook_(step_, model_, plan());
    if (plan_) rec.refreshed = maybe_refresh(*plan_, count, model_.net(), model_.weight_set());

    ++step_;
    ++sum.steps;
    sum.samples += count;
    loss_acc += loss_value;
    sum.bwd_seconds += rec.bwd_seconds;
    sum.theoretical_bwd_macs += rec.theoretical_bwd_macs;
    sum.measured_bwd_macs += rec.measured_bwd_macs;
    if (rec.refreshed) ++sum.refreshes;

    const bool last = begin + cfg_.batch_size >= order.size() || (cfg_.max_steps && sum.steps >= cfg_.max_steps);
    if (last && eval) {
      sum.eval = evaluate(model_, *eval, quantized);
      rec.eval_accuracy = sum.eval->accuracy;
    }
    if (sink_) sink_(rec);
  }
  sum.mean_loss = sum.steps ? loss_acc / static_cast<double>(sum.steps) : 0.0;
  ++epoch_;
  return sum;
}

}  // namespace efqat
