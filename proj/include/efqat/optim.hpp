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

#ifndef EFQAT_OPTIM_HPP_
#define EFQAT_OPTIM_HPP_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "efqat/autograd.hpp"
#include "efqat/kernels.hpp"

namespace efqat {

struct SgdConfig {
  double lr = 0.005;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// Momentum SGD: d = g + wd·p; buf = μ·buf + d; p -= lr·buf. Buffers are
/// zero-initialised, so the first step matches buf = d.
class Sgd {
 public:
  Sgd() = default;
  explicit Sgd(SgdConfig cfg) : cfg_(cfg) {}

  /// Updates p from p.grad. With `rows`, only rows (dim 0 slices) whose mask
  /// bit is set are touched, in both p and its momentum buffer.
  void step(Parameter& p, const RowMask* rows = nullptr);

  const SgdConfig& config() const noexcept { return cfg_; }
  std::map<std::string, Tensor>& buffers() noexcept { return buffers_; }
  const std::map<std::string, Tensor>& buffers() const noexcept { return buffers_; }

 private:
  SgdConfig cfg_;
  std::map<std::string, Tensor> buffers_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over named float vectors. Step counters are per
/// element so gated (frozen) entries resume with their own count.
class Adam {
 public:
  struct Slot {
    std::vector<float> m;
    std::vector<float> v;
    std::vector<std::uint64_t> t;
  };

  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  /// Entries with gate[i] == 0 are neither read nor written.
  void step(const std::string& key, std::span<float> value, std::span<const float> grad,
            const std::vector<std::uint8_t>* gate = nullptr);

  const AdamConfig& config() const noexcept { return cfg_; }
  std::map<std::string, Slot>& slots() noexcept { return slots_; }
  const std::map<std::string, Slot>& slots() const noexcept { return slots_; }

 private:
  AdamConfig cfg_;
  std::map<std::string, Slot> slots_;
};

}  // namespace efqat

#endif  // EFQAT_OPTIM_HPP_
