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

// Importance-based structured freezing.
//
// A block's importance is the mean absolute value of its weights. Blocks are
// output channels (CWPL, CWPN) or whole layers (LWPN). Ties are broken by
// (layer id, channel index) ascending, so every plan is a pure function of the
// weights.

#ifndef EFQAT_FREEZE_HPP_
#define EFQAT_FREEZE_HPP_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "efqat/kernels.hpp"
#include "efqat/netspec.hpp"
#include "efqat/tensor.hpp"

namespace efqat {

enum class FreezeMode { kCwpl, kCwpn, kLwpn };

const char* to_string(FreezeMode m);
FreezeMode parse_freeze_mode(const std::string& s);

/// floor(r·n), tolerant of binary representation error in r (e.g. 0.05·20).
std::size_t floor_ratio(double r, std::size_t n);

struct ImportanceEntry {
  int layer = -1;
  std::size_t channel = 0;  // unused for whole-layer blocks
  double importance = 0.0;
  std::size_t size = 0;
};

double block_importance(std::span<const float> block);

/// Current latent weights of the quantized layers, by layer id.
using WeightSet = std::map<int, const Tensor*>;

/// Refresh interval value meaning "never refresh".
inline constexpr std::uint64_t kNeverRefresh = 0;

struct FreezePlan {
  FreezeMode mode = FreezeMode::kCwpl;
  double ratio = 1.0;
  std::map<int, RowMask> masks;
  std::uint64_t refresh_interval = kNeverRefresh;
  std::uint64_t samples_since_refresh = 0;
  std::size_t refreshes = 0;

  const RowMask* mask(int layer) const;
  std::size_t unfrozen_params(const NetSpec& net) const;
  double frozen_fraction(const NetSpec& net) const;
  /// Same masks, mode and ratio (schedule counters ignored).
  bool same_selection(const FreezePlan& other) const;
};

std::vector<ImportanceEntry> channel_importances(const NetSpec& net, const WeightSet& weights);
std::vector<ImportanceEntry> layer_importances(const NetSpec& net, const WeightSet& weights);

FreezePlan plan_cwpl(const NetSpec& net, const WeightSet& weights, double r);
FreezePlan plan_cwpn(const NetSpec& net, const WeightSet& weights, double r);
FreezePlan plan_lwpn(const NetSpec& net, const WeightSet& weights, double r);
FreezePlan make_plan(FreezeMode mode, const NetSpec& net, const WeightSet& weights, double r,
                     std::uint64_t refresh_interval = kNeverRefresh);

/// Counts `samples` more training samples (called on batch boundaries). Once the
/// count reaches the refresh interval, rebuilds the masks from the current
/// weights under the same mode and ratio and resets the count. Returns true on
/// refresh.
bool maybe_refresh(FreezePlan& plan, std::uint64_t samples, const NetSpec& net, const WeightSet& weights);

/// Human-readable per-layer summary of a plan.
std::string plan_report(const FreezePlan& plan, const NetSpec& net);

}  // namespace efqat

#endif  // EFQAT_FREEZE_HPP_
