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

#include "json_io.hpp"

namespace efqat {

json netspec_to_json(const NetSpec& net) {
  json layers = json::array();
  for (const LayerSpec& l : net.layers) {
    json e{{"kind", to_string(l.kind)}};
    switch (l.kind) {
      case LayerKind::kConv:
        e["in"] = l.in_channels;
        e["out"] = l.out_channels;
        e["kernel"] = l.kernel;
        e["stride"] = l.stride;
        e["padding"] = l.padding;
        e["quantize"] = l.quantize;
        e["bias"] = l.bias;
        break;
      case LayerKind::kLinear:
        e["in"] = l.in_channels;
        e["out"] = l.out_channels;
        e["quantize"] = l.quantize;
        e["bias"] = l.bias;
        break;
      case LayerKind::kPool:
        e["kernel"] = l.kernel;
        break;
      default:
        break;
    }
    layers.push_back(std::move(e));
  }
  return json{{"input", net.input}, {"bits_w", net.bits_w}, {"bits_a", net.bits_a}, {"layers", std::move(layers)}};
}

namespace {

Shape read_shape(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path + ": expected a non-empty array of extents");
  Shape s;
  for (const json& e : j) {
    if (!e.is_number_integer() || e.get<long long>() <= 0) throw ConfigError(path + ": extents must be positive integers");
    s.push_back(e.get<std::size_t>());
  }
  return s;
}

}  // namespace

NetSpec netspec_from_json(const json& j, const std::string& path) {
  StrictObject o(j, path);
  NetSpec net;
  if (o.has("preset")) {
    const std::string preset = o.require<std::string>("preset");
    if (preset == "reference_cnn") {
      net = NetSpec::reference_cnn(o.get<std::size_t>("side", 12), o.get<std::size_t>("classes", 32),
                                   o.get<std::size_t>("width", 64));
    } else if (preset == "mlp") {
      std::vector<std::size_t> hidden;
      if (o.has("hidden")) {
        const json& h = o.raw("hidden");
        if (!h.is_array()) throw ConfigError(o.where("hidden") + ": expected an array");
        for (const json& e : h) {
          if (!e.is_number_integer() || e.get<long long>() <= 0) throw ConfigError(o.where("hidden") + ": widths must be positive");
          hidden.push_back(e.get<std::size_t>());
        }
      }
      net = NetSpec::mlp(o.require<std::size_t>("in"), hidden, o.get<std::size_t>("classes", 10));
    } else {
      throw ConfigError(o.where("preset") + ": unknown preset '" + preset + "' (expected reference_cnn or mlp)");
    }
  } else {
    net.input = read_shape(o.raw("input"), o.where("input"));
    if (!o.has("layers") || !o.raw("layers").is_array()) throw ConfigError(o.where("layers") + ": expected an array");
    const json& layers = o.raw("layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      StrictObject lo(layers[i], o.where("layers") + "[" + std::to_string(i) + "]");
      LayerSpec l;
      try {
        l.kind = parse_layer_kind(lo.require<std::string>("kind"));
      } catch (const ConfigError& e) {
        throw ConfigError(lo.where("kind") + ": " + e.what());
      }
      if (l.has_weights()) {
        l.in_channels = lo.get<std::size_t>("in", 0);
        l.out_channels = lo.require<std::size_t>("out");
        l.quantize = lo.get<bool>("quantize", true);
        l.bias = lo.get<bool>("bias", true);
      }
      if (l.kind == LayerKind::kConv) {
        l.kernel = lo.get<std::size_t>("kernel", 3);
        l.stride = lo.get<std::size_t>("stride", 1);
        l.padding = lo.get<std::size_t>("padding", 0);
      } else if (l.kind == LayerKind::kPool) {
        l.kernel = lo.get<std::size_t>("kernel", 2);
      }
      lo.finish();
      net.layers.push_back(l);
    }
    try {
      net.resolve();
    } catch (const ConfigError& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
  net.bits_w = o.get<int>("bits_w", net.bits_w);
  net.bits_a = o.get<int>("bits_a", net.bits_a);
  if (net.bits_w < 2 || net.bits_w > 16 || net.bits_a < 2 || net.bits_a > 16) {
    throw ConfigError(path + ": bit-widths must lie in [2, 16]");
  }
  o.finish();
  return net;
}

}  // namespace efqat
