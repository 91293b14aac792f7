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

#include "efqat/model.hpp"

#include <cmath>
#include <string>

#include "efqat/error.hpp"
#include "efqat/rng.hpp"

namespace efqat {

Model::Model(NetSpec net, std::uint64_t seed) : net_(std::move(net)) {
  if (net_.layers.empty()) throw ConfigError("network has no layers");
  if (net_.layers.front().in_shape.empty()) net_.resolve();
  Rng rng(seed);
  layers_.resize(net_.layers.size());
  for (std::size_t i = 0; i < net_.layers.size(); ++i) {
    const LayerSpec& l = net_.layers[i];
    LayerState& s = layers_[i];
    const std::string prefix = "layer" + std::to_string(i) + ".";
    if (l.has_weights()) {
      Tensor w(l.weight_shape());
      const double std = std::sqrt(2.0 / static_cast<double>(l.channel_size()));
      for (std::size_t j = 0; j < w.numel(); ++j) w[j] = static_cast<float>(std * rng.normal());
      s.weight.emplace(prefix + "weight", std::move(w));
      if (l.bias) s.bias.emplace(prefix + "bias", Tensor({l.out_channels}));
    } else if (l.kind == LayerKind::kNormalize) {
      const std::size_t c = l.in_shape.front();
      s.gamma.emplace(prefix + "gamma", Tensor({c}, 1.0f));
      s.beta.emplace(prefix + "beta", Tensor({c}));
      s.running.mean.assign(c, 0.0f);
      s.running.var.assign(c, 1.0f);
    }
  }
}

Var Model::forward(Tape& tape, const Tensor& x, const ForwardOptions& opt) {
  if (x.rank() != net_.input.size() + 1 ||
      !std::equal(net_.input.begin(), net_.input.end(), x.shape().begin() + 1)) {
    throw DimensionError("model expects per-sample input " + shape_str(net_.input) + ", got batch " +
                         shape_str(x.shape()));
  }
  Var cur = tape.constant(x);
  for (std::size_t i = 0; i < net_.layers.size(); ++i) {
    const LayerSpec& l = net_.layers[i];
    LayerState& s = layers_[i];
    const int id = static_cast<int>(i);
    switch (l.kind) {
      case LayerKind::kLinear:
      case LayerKind::kConv: {
        if (opt.observers && l.quantize) {
          auto [it, fresh] = opt.observers->try_emplace(id, Granularity::kPerTensor);
          it->second.observe(cur.value());
        }
        Var w = tape.param(*s.weight);
        auto q = quant_.find(id);
        if (opt.quantize && l.quantize && q != quant_.end()) {
          QuantLayer& ql = q->second;
          cur = fake_quant(cur, ql.input, opt.train_qparams ? &ql.input_grad : nullptr);
          w = fake_quant(w, ql.weight, opt.train_qparams ? &ql.weight_grad : nullptr);
        }
        const RowMask* mask = nullptr;
        if (opt.masks) {
          auto m = opt.masks->find(id);
          if (m != opt.masks->end()) mask = &m->second;
        }
        std::optional<Var> b;
        if (s.bias) b = tape.param(*s.bias);
        cur = l.kind == LayerKind::kLinear ? linear(cur, w, b, mask, id)
                                           : conv2d(cur, w, b, l.stride, l.padding, mask, id);
        break;
      }
      case LayerKind::kRelu:
        cur = relu(cur);
        break;
      case LayerKind::kPool:
        cur = max_pool2d(cur, l.kernel);
        break;
      case LayerKind::kFlatten:
        cur = flatten(cur);
        break;
      case LayerKind::kNormalize:
        cur = batch_norm(cur, tape.param(*s.gamma), tape.param(*s.beta), s.running, opt.training);
        break;
    }
  }
  return cur;
}

WeightSet Model::weight_set() const {
  WeightSet ws;
  for (int id : net_.quantized_layers()) ws[id] = &layers_[id].weight->value;
  return ws;
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  for (LayerState& s : layers_) {
    for (auto* p : {&s.weight, &s.bias, &s.gamma, &s.beta})
      if (*p) out.push_back(&**p);
  }
  return out;
}

void Model::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
  for (auto& [id, q] : quant_) {
    q.weight_grad.reset(q.weight.slices());
    q.input_grad.reset(q.input.slices());
  }
}

bool Model::operator==(const Model& other) const {
  if (!(net_ == other.net_) || layers_.size() != other.layers_.size() || quant_.size() != other.quant_.size()) {
    return false;
  }
  auto same = [](const std::optional<Parameter>& a, const std::optional<Parameter>& b) {
    return a.has_value() == b.has_value() && (!a || (a->name == b->name && a->value == b->value));
  };
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerState &a = layers_[i], &b = other.layers_[i];
    if (!same(a.weight, b.weight) || !same(a.bias, b.bias) || !same(a.gamma, b.gamma) || !same(a.beta, b.beta)) {
      return false;
    }
    if (a.running.mean != b.running.mean || a.running.var != b.running.var) return false;
  }
  for (const auto& [id, q] : quant_) {
    auto it = other.quant_.find(id);
    if (it == other.quant_.end() || !(q.weight == it->second.weight) || !(q.input == it->second.input)) return false;
  }
  return true;
}

}  // namespace efqat
