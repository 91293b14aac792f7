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

// Reverse-mode automatic differentiation over a linear tape.
//
// A Tape records one forward pass. backward() walks the nodes in reverse
// recording order, then releases them: a tape serves exactly one step.
// Gradients of trainable tensors land in their Parameter::grad buffers, which
// outlive the tape.

#ifndef EFQAT_AUTOGRAD_HPP_
#define EFQAT_AUTOGRAD_HPP_

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "efqat/kernels.hpp"
#include "efqat/tensor.hpp"

namespace efqat {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros_like(value)) {}
  void zero_grad() { grad.fill(0.0f); }
};

enum class OpKind {
  kConstant,
  kParameter,
  kMatmul,
  kAdd,
  kMul,
  kRelu,
  kSum,
  kLinear,
  kConv2d,
  kMaxPool,
  kFlatten,
  kBatchNorm,
  kCrossEntropy,
  kFakeQuantAsym,
  kFakeQuantSym,
};

const char* op_name(OpKind kind);

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  int id() const noexcept { return id_; }
  Tape& tape() const { return *tape_; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Trainable leaf. The tape references p; gradients accumulate into p.grad.
  Var param(Parameter& p);
  /// Appends an op node. The node requires grad if any input does, or if
  /// `trainable_context` is set (the op owns parameters outside the tape).
  Var record(OpKind kind, std::vector<int> inputs, Tensor value, BackwardFn backward,
             bool trainable_context = false);

  const Tensor& value(int id) const;
  bool requires_grad(int id) const;
  OpKind kind(int id) const;
  const std::vector<int>& inputs(int id) const;
  /// Upstream gradient dL/d(node output); valid only inside a backward callback.
  const Tensor& grad(int id) const;
  /// Accumulator for node `id`, zero-initialised on first use.
  Tensor& grad_accumulator(int id);

  /// Seeds dL/dL = 1 and propagates. Throws ContractError for non-scalar loss
  /// or a loss that is not on this tape. Releases all nodes afterwards.
  void backward(Var loss);

  /// Per-layer MAC tallies recorded by linear/conv ops. Survives backward().
  MacTally& macs(int layer) { return macs_[layer]; }
  const std::map<int, MacTally>& mac_ledger() const { return macs_; }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

 private:
  struct Node {
    OpKind kind = OpKind::kConstant;
    std::vector<int> inputs;
    Tensor value;
    Parameter* param = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  const Node& node(int id) const;
  Node& node(int id);

  std::vector<Node> nodes_;
  std::map<int, MacTally> macs_;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Differentiable ops. All inputs must live on the same tape.

Var matmul(Var a, Var b);
/// Elementwise add; `b` may broadcast over the leading axes of `a` when its
/// shape equals a suffix of a's shape.
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var relu(Var x);
Var sum(Var x);
Var flatten(Var x);
Var max_pool2d(Var x, std::size_t k);

/// y = x·wᵀ + b. The mask selects which weight rows receive gradients; null
/// means dense. MACs are recorded under `layer`.
Var linear(Var x, Var w, std::optional<Var> bias, const RowMask* mask, int layer);
Var conv2d(Var x, Var w, std::optional<Var> bias, std::size_t stride, std::size_t padding, const RowMask* mask,
           int layer);

struct ChannelStats {
  std::vector<float> mean;
  std::vector<float> var;  // biased
  std::vector<float> invstd;
};

/// Statistics over every axis except axis 1 (features of [N×C], channels of [N×C×H×W]).
ChannelStats channel_stats(const Tensor& x, float eps);
Tensor normalize_with(const Tensor& x, const ChannelStats& s, std::span<const float> gamma,
                      std::span<const float> beta);
Tensor denormalize_with(const Tensor& y, const ChannelStats& s, std::span<const float> gamma,
                        std::span<const float> beta);

struct RunningStats {
  std::vector<float> mean;
  std::vector<float> var;
  float momentum = 0.1f;
  float eps = 1e-5f;
};

/// Batch-statistic normalisation with learnable per-channel scale and shift.
/// training: normalise by batch statistics and update `running`;
/// otherwise normalise by the running statistics.
Var batch_norm(Var x, Var gamma, Var beta, RunningStats& running, bool training);

/// Mean softmax cross-entropy over the batch; logits [N×C].
Var cross_entropy(Var logits, std::span<const int> labels);

}  // namespace efqat

#endif  // EFQAT_AUTOGRAD_HPP_
