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

#ifndef EFQAT_NETSPEC_HPP_
#define EFQAT_NETSPEC_HPP_

#include <cstddef>
#include <string>
#include <vector>

#include "efqat/tensor.hpp"

namespace efqat {

enum class LayerKind { kLinear, kConv, kRelu, kPool, kNormalize, kFlatten };

const char* to_string(LayerKind k);
LayerKind parse_layer_kind(const std::string& s);

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::size_t in_channels = 0;  // inferred by NetSpec::resolve() when 0
  std::size_t out_channels = 0;
  std::size_t kernel = 1;       // conv kernel or pool window
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool quantize = true;         // only meaningful for linear/conv
  bool bias = true;

  // Per-sample shapes, filled by resolve().
  Shape in_shape;
  Shape out_shape;

  bool has_weights() const noexcept { return kind == LayerKind::kLinear || kind == LayerKind::kConv; }
  /// Parameters in one output channel (row) of the weight.
  std::size_t channel_size() const noexcept;
  std::size_t weight_count() const noexcept { return out_channels * channel_size(); }
  Shape weight_shape() const;
  /// H_out·W_out for conv, 1 for linear.
  std::size_t spatial_out() const noexcept;

  bool operator==(const LayerSpec&) const = default;
};

/// Layer stack plus bit-widths. Layer ids are indices into `layers`.
struct NetSpec {
  Shape input;  // per-sample input shape, e.g. {1, 16, 16} or {features}
  std::vector<LayerSpec> layers;
  int bits_w = 4;
  int bits_a = 8;

  /// Infers channel counts and per-sample shapes; throws ConfigError when
  /// adjacent shapes do not compose or a quantized layer is not linear/conv.
  void resolve();
  std::vector<int> weight_layers() const;
  std::vector<int> quantized_layers() const;
  std::size_t total_weight_params() const;
  std::size_t num_classes() const;

  /// Reference desk-scale CNN: two conv blocks and two linear layers.
  static NetSpec reference_cnn(std::size_t side = 12, std::size_t classes = 10, std::size_t width = 64);
  static NetSpec mlp(std::size_t in, std::vector<std::size_t> hidden, std::size_t classes);

  bool operator==(const NetSpec&) const = default;
};

}  // namespace efqat

#endif  // EFQAT_NETSPEC_HPP_
