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

#ifndef EFQAT_MODEL_HPP_
#define EFQAT_MODEL_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "efqat/autograd.hpp"
#include "efqat/freeze.hpp"
#include "efqat/netspec.hpp"
#include "efqat/quantizer.hpp"

namespace efqat {

struct LayerState {
  std::optional<Parameter> weight;
  std::optional<Parameter> bias;
  std::optional<Parameter> gamma;  // normalize layers
  std::optional<Parameter> beta;
  RunningStats running;
};

/// Quantizers of one quantized linear/conv layer: symmetric per-channel for
/// the weight, asymmetric per-tensor for its input activation.
struct QuantLayer {
  QuantParams weight;
  QuantParams input;
  QuantGrads weight_grad;
  QuantGrads input_grad;
};

struct ForwardOptions {
  bool training = false;        // batch statistics in normalize layers
  bool quantize = false;        // fake-quant inputs and weights of quantized layers
  bool train_qparams = false;   // accumulate scale / zero-point gradients
  const std::map<int, RowMask>* masks = nullptr;  // nullptr: dense weight gradients
  /// When set, records the (unquantized) input range of each quantized layer.
  std::map<int, RangeObserver>* observers = nullptr;
};

class Model {
 public:
  Model() = default;
  /// He-normal weights, zero biases, unit/zero normalize affine.
  Model(NetSpec net, std::uint64_t seed);

  const NetSpec& net() const noexcept { return net_; }
  std::vector<LayerState>& layers() noexcept { return layers_; }
  const std::vector<LayerState>& layers() const noexcept { return layers_; }
  std::map<int, QuantLayer>& quant() noexcept { return quant_; }
  const std::map<int, QuantLayer>& quant() const noexcept { return quant_; }
  bool quantized() const noexcept { return !quant_.empty(); }
  void clear_quant() { quant_.clear(); }

  /// Builds the forward graph on `tape` and returns the logits.
  Var forward(Tape& tape, const Tensor& x, const ForwardOptions& options);

  /// Weights of quantized layers, the tensors the freeze planner ranks.
  WeightSet weight_set() const;
  /// Every trainable tensor, in layer order.
  std::vector<Parameter*> parameters();
  void zero_grad();

  bool operator==(const Model& other) const;

 private:
  NetSpec net_;
  std::vector<LayerState> layers_;
  std::map<int, QuantLayer> quant_;
};

}  // namespace efqat

#endif  // EFQAT_MODEL_HPP_
