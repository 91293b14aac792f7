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

#include "efqat/netspec.hpp"

#include "efqat/error.hpp"
#include "efqat/kernels.hpp"

namespace efqat {

const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::kLinear: return "linear";
    case LayerKind::kConv: return "conv";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kPool: return "pool";
    case LayerKind::kNormalize: return "normalize";
    case LayerKind::kFlatten: return "flatten";
  }
  return "unknown";
}

LayerKind parse_layer_kind(const std::string& s) {
  if (s == "linear") return LayerKind::kLinear;
  if (s == "conv") return LayerKind::kConv;
  if (s == "relu") return LayerKind::kRelu;
  if (s == "pool") return LayerKind::kPool;
  if (s == "normalize") return LayerKind::kNormalize;
  if (s == "flatten") return LayerKind::kFlatten;
  throw ConfigError("unknown layer kind '" + s + "'");
}

std::size_t LayerSpec::channel_size() const noexcept {
  if (kind == LayerKind::kConv) return in_channels * kernel * kernel;
  if (kind == LayerKind::kLinear) return in_channels;
  return 0;
}

Shape LayerSpec::weight_shape() const {
  if (kind == LayerKind::kConv) return {out_channels, in_channels, kernel, kernel};
  if (kind == LayerKind::kLinear) return {out_channels, in_channels};
  return {};
}

std::size_t LayerSpec::spatial_out() const noexcept {
  if (kind == LayerKind::kConv && out_shape.size() == 3) return out_shape[1] * out_shape[2];
  return 1;
}

void NetSpec::resolve() {
  if (input.empty()) throw ConfigError("network input shape is empty");
  if (layers.empty()) throw ConfigError("network has no layers");
  Shape cur = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    LayerSpec& l = layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
    l.in_shape = cur;
    switch (l.kind) {
      case LayerKind::kLinear:
        if (cur.size() != 1) throw ConfigError(where + " needs a flat input, got " + shape_str(cur) + "; add a flatten layer");
        if (l.in_channels && l.in_channels != cur[0]) {
          throw ConfigError(where + " declares C_in=" + std::to_string(l.in_channels) + " but receives " + std::to_string(cur[0]));
        }
        if (!l.out_channels) throw ConfigError(where + " needs out > 0");
        l.in_channels = cur[0];
        cur = {l.out_channels};
        break;
      case LayerKind::kConv: {
        if (cur.size() != 3) throw ConfigError(where + " needs a [C×H×W] input, got " + shape_str(cur));
        if (l.in_channels && l.in_channels != cur[0]) {
          throw ConfigError(where + " declares C_in=" + std::to_string(l.in_channels) + " but receives " + std::to_string(cur[0]));
        }
        if (!l.out_channels || !l.kernel) throw ConfigError(where + " needs out > 0 and k > 0");
        l.in_channels = cur[0];
        try {
          cur = {l.out_channels, conv_out_extent(cur[1], l.kernel, l.stride, l.padding),
                 conv_out_extent(cur[2], l.kernel, l.stride, l.padding)};
        } catch (const DimensionError& e) {
          throw ConfigError(where + ": " + e.what());
        }
        break;
      }
      case LayerKind::kPool:
        if (cur.size() != 3 || !l.kernel || cur[1] < l.kernel || cur[2] < l.kernel) {
          throw ConfigError(where + " window " + std::to_string(l.kernel) + " does not fit " + shape_str(cur));
        }
        cur = {cur[0], cur[1] / l.kernel, cur[2] / l.kernel};
        break;
      case LayerKind::kNormalize:
        if (cur.size() != 1 && cur.size() != 3) throw ConfigError(where + " expects flat or [C×H×W] input");
        l.in_channels = l.out_channels = cur[0];
        break;
      case LayerKind::kRelu:
        break;
      case LayerKind::kFlatten:
        cur = {shape_numel(cur)};
        break;
    }
    if (!l.has_weights()) l.quantize = false;
    l.out_shape = cur;
  }
  if (cur.size() != 1) throw ConfigError("network must end in a flat logits layer, ends in " + shape_str(cur));
}

std::vector<int> NetSpec::weight_layers() const {
  std::vector<int> ids;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].has_weights()) ids.push_back(static_cast<int>(i));
  return ids;
}

std::vector<int> NetSpec::quantized_layers() const {
  std::vector<int> ids;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].has_weights() && layers[i].quantize) ids.push_back(static_cast<int>(i));
  return ids;
}

std::size_t NetSpec::total_weight_params() const {
  std::size_t n = 0;
  for (int id : quantized_layers()) n += layers[id].weight_count();
  return n;
}

std::size_t NetSpec::num_classes() const {
  if (layers.empty() || layers.back().out_shape.size() != 1) throw ConfigError("network is not resolved");
  return layers.back().out_shape[0];
}

NetSpec NetSpec::reference_cnn(std::size_t side, std::size_t classes, std::size_t width) {
  NetSpec net;
  net.input = {1, side, side};
  const std::size_t half = width / 2;
  net.layers = {
      {LayerKind::kConv, 0, half, 3, 1, 1},
      {LayerKind::kNormalize},
      {LayerKind::kRelu},
      {LayerKind::kPool, 0, 0, 2},
      {LayerKind::kConv, 0, width, 3, 1, 1},
      {LayerKind::kNormalize},
      {LayerKind::kRelu},
      {LayerKind::kPool, 0, 0, 2},
      {LayerKind::kFlatten},
      {LayerKind::kLinear, 0, width},
      {LayerKind::kRelu},
      {LayerKind::kLinear, 0, classes},
  };
  net.resolve();
  return net;
}

NetSpec NetSpec::mlp(std::size_t in, std::vector<std::size_t> hidden, std::size_t classes) {
  NetSpec net;
  net.input = {in};
  for (std::size_t h : hidden) {
    net.layers.push_back({LayerKind::kLinear, 0, h});
    net.layers.push_back({LayerKind::kRelu});
  }
  net.layers.push_back({LayerKind::kLinear, 0, classes});
  net.resolve();
  return net;
}

}  // namespace efqat
