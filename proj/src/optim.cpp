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

#include "efqat/optim.hpp"

#include <cmath>

#include "efqat/error.hpp"

namespace efqat {

void Sgd::step(Parameter& p, const RowMask* rows) {
  if (p.grad.shape() != p.value.shape()) {
    throw DimensionError("gradient " + shape_str(p.grad.shape()) + " does not match parameter '" + p.name + "' " +
                         shape_str(p.value.shape()));
  }
  const std::size_t n_rows = p.value.rank() ? p.value.dim(0) : 1;
  if (rows && rows->size() != n_rows) {
    throw ConfigError("row mask of length " + std::to_string(rows->size()) + " for parameter '" + p.name +
                      "' with " + std::to_string(n_rows) + " rows");
  }
  if (rows && rows->none()) return;
  auto [it, fresh] = buffers_.try_emplace(p.name, Tensor::zeros_like(p.value));
  Tensor& buf = it->second;
  const float lr = static_cast<float>(cfg_.lr), mu = static_cast<float>(cfg_.momentum),
              wd = static_cast<float>(cfg_.weight_decay);
  const std::size_t row_len = p.value.numel() / n_rows;
  for (std::size_t r = 0; r < n_rows; ++r) {
    if (rows && !(*rows)[r]) continue;
    for (std::size_t i = r * row_len; i < (r + 1) * row_len; ++i) {
      const float d = p.grad[i] + wd * p.value[i];
      buf[i] = mu * buf[i] + d;
      p.value[i] -= lr * buf[i];
    }
  }
}

void Adam::step(const std::string& key, std::span<float> value, std::span<const float> grad,
                const std::vector<std::uint8_t>* gate) {
  if (grad.size() != value.size()) {
    throw DimensionError("Adam '" + key + "': " + std::to_string(grad.size()) + " gradients for " +
                         std::to_string(value.size()) + " values");
  }
  if (gate && gate->size() != value.size()) throw ConfigError("Adam '" + key + "': gate length mismatch");
  Slot& s = slots_[key];
  if (s.m.size() != value.size()) {
    s.m.assign(value.size(), 0.0f);
    s.v.assign(value.size(), 0.0f);
    s.t.assign(value.size(), 0);
  }
  for (std::size_t i = 0; i < value.size(); ++i) {
    if (gate && !(*gate)[i]) continue;
    const double g = grad[i];
    const double m = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
    const double v = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
    const std::uint64_t t = ++s.t[i];
    const double mhat = m / (1.0 - std::pow(cfg_.beta1, static_cast<double>(t)));
    const double vhat = v / (1.0 - std::pow(cfg_.beta2, static_cast<double>(t)));
    s.m[i] = static_cast<float>(m);
    s.v[i] = static_cast<float>(v);
    value[i] = static_cast<float>(value[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
  }
}

}  // namespace efqat
