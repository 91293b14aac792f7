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

#include "efqat/freeze.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "efqat/error.hpp"

namespace efqat {

const char* to_string(FreezeMode m) {
  switch (m) {
    case FreezeMode::kCwpl: return "cwpl";
    case FreezeMode::kCwpn: return "cwpn";
    case FreezeMode::kLwpn: return "lwpn";
  }
  return "unknown";
}

FreezeMode parse_freeze_mode(const std::string& s) {
  if (s == "cwpl") return FreezeMode::kCwpl;
  if (s == "cwpn") return FreezeMode::kCwpn;
  if (s == "lwpn") return FreezeMode::kLwpn;
  throw ConfigError("unknown freeze mode '" + s + "'");
}

std::size_t floor_ratio(double r, std::size_t n) {
  const double x = r * static_cast<double>(n);
  return static_cast<std::size_t>(std::floor(x + 1e-9 * std::max(1.0, x)));
}

double block_importance(std::span<const float> block) {
  if (block.empty()) throw ContractError("importance of an empty block");
  double acc = 0.0;
  for (float w : block) acc += std::abs(static_cast<double>(w));
  return acc / static_cast<double>(block.size());
}

const RowMask* FreezePlan::mask(int layer) const {
  auto it = masks.find(layer);
  return it == masks.end() ? nullptr : &it->second;
}

std::size_t FreezePlan::unfrozen_params(const NetSpec& net) const {
  std::size_t n = 0;
  for (const auto& [layer, m] : masks) n += m.popcount() * net.layers.at(layer).channel_size();
  return n;
}

double FreezePlan::frozen_fraction(const NetSpec& net) const {
  const std::size_t total = net.total_weight_params();
  if (!total) return 0.0;
  return 1.0 - static_cast<double>(unfrozen_params(net)) / static_cast<double>(total);
}

bool FreezePlan::same_selection(const FreezePlan& other) const {
  return mode == other.mode && ratio == other.ratio && masks == other.masks;
}

namespace {

void check_ratio(double r) {
  if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("unfrozen ratio must lie in [0, 1], got " + std::to_string(r));
}

const Tensor& weight_of(const NetSpec& net, const WeightSet& weights, int layer) {
  auto it = weights.find(layer);
  if (it == weights.end() || !it->second) {
    throw ConfigError("no weights supplied for quantized layer " + std::to_string(layer));
  }
  const Shape expect = net.layers[layer].weight_shape();
  if (it->second->shape() != expect) {
    throw ConfigError("layer " + std::to_string(layer) + " weight " + shape_str(it->second->shape()) +
                      " does not match spec " + shape_str(expect));
  }
  return *it->second;
}

// Descending importance; ties by layer then channel ascending.
void rank(std::vector<ImportanceEntry>& entries) {
  std::stable_sort(entries.begin(), entries.end(), [](const ImportanceEntry& a, const ImportanceEntry& b) {
    if (a.importance != b.importance) return a.importance > b.importance;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.channel < b.channel;
  });
}

FreezePlan empty_plan(FreezeMode mode, const NetSpec& net, double r) {
  FreezePlan plan;
  plan.mode = mode;
  plan.ratio = r;
  for (int id : net.quantized_layers()) plan.masks[id] = RowMask::filled(id, net.layers[id].out_channels, false);
  return plan;
}

}  // namespace

std::vector<ImportanceEntry> channel_importances(const NetSpec& net, const WeightSet& weights) {
  std::vector<ImportanceEntry> out;
  for (int id : net.quantized_layers()) {
    const Tensor& w = weight_of(net, weights, id);
    const std::size_t cs = net.layers[id].channel_size();
    for (std::size_t c = 0; c < net.layers[id].out_channels; ++c) {
      out.push_back({id, c, block_importance(w.span().subspan(c * cs, cs)), cs});
    }
  }
  return out;
}

std::vector<ImportanceEntry> layer_importances(const NetSpec& net, const WeightSet& weights) {
  std::vector<ImportanceEntry> out;
  for (int id : net.quantized_layers()) {
    const Tensor& w = weight_of(net, weights, id);
    out.push_back({id, 0, block_importance(w.span()), w.numel()});
  }
  return out;
}

FreezePlan plan_cwpl(const NetSpec& net, const WeightSet& weights, double r) {
  check_ratio(r);
  FreezePlan plan = empty_plan(FreezeMode::kCwpl, net, r);
  std::vector<ImportanceEntry> all = channel_importances(net, weights);
  for (int id : net.quantized_layers()) {
    std::vector<ImportanceEntry> layer;
    for (const auto& e : all)
      if (e.layer == id) layer.push_back(e);
    rank(layer);
    const std::size_t keep = floor_ratio(r, net.layers[id].out_channels);
    for (std::size_t i = 0; i < keep; ++i) plan.masks[id].rows[layer[i].channel] = 1;
  }
  return plan;
}

FreezePlan plan_cwpn(const NetSpec& net, const WeightSet& weights, double r) {
  check_ratio(r);
  FreezePlan plan = empty_plan(FreezeMode::kCwpn, net, r);
  std::vector<ImportanceEntry> all = channel_importances(net, weights);
  rank(all);
  const std::size_t budget = floor_ratio(r, net.total_weight_params());
  std::size_t used = 0;
  for (const auto& e : all) {
    if (used + e.size > budget) break;
    used += e.size;
    plan.masks[e.layer].rows[e.channel] = 1;
  }
  return plan;
}

FreezePlan plan_lwpn(const NetSpec& net, const WeightSet& weights, double r) {
  check_ratio(r);
  FreezePlan plan = empty_plan(FreezeMode::kLwpn, net, r);
  std::vector<ImportanceEntry> layers = layer_importances(net, weights);
  rank(layers);
  const std::size_t budget = floor_ratio(r, net.total_weight_params());
  std::size_t used = 0;
  for (const auto& e : layers) {
    if (used + e.size > budget) break;
    used += e.size;
    std::fill(plan.masks[e.layer].rows.begin(), plan.masks[e.layer].rows.end(), std::uint8_t{1});
  }
  return plan;
}

FreezePlan make_plan(FreezeMode mode, const NetSpec& net, const WeightSet& weights, double r,
                     std::uint64_t refresh_interval) {
  FreezePlan plan;
  switch (mode) {
    case FreezeMode::kCwpl: plan = plan_cwpl(net, weights, r); break;
    case FreezeMode::kCwpn: plan = plan_cwpn(net, weights, r); break;
    case FreezeMode::kLwpn: plan = plan_lwpn(net, weights, r); break;
  }
  plan.refresh_interval = refresh_interval;
  return plan;
}

bool maybe_refresh(FreezePlan& plan, std::uint64_t samples, const NetSpec& net, const WeightSet& weights) {
  if (plan.refresh_interval == kNeverRefresh) return false;
  plan.samples_since_refresh += samples;
  if (plan.samples_since_refresh < plan.refresh_interval) return false;
  FreezePlan fresh = make_plan(plan.mode, net, weights, plan.ratio, plan.refresh_interval);
  fresh.refreshes = plan.refreshes + 1;
  fresh.samples_since_refresh = 0;
  plan = std::move(fresh);
  return true;
}

std::string plan_report(const FreezePlan& plan, const NetSpec& net) {
  std::ostringstream os;
  os << "mode " << to_string(plan.mode) << "  ratio " << plan.ratio << "\n";
  os << std::left << std::setw(7) << "layer" << std::setw(8) << "kind" << std::setw(8) << "C_out" << std::setw(10)
     << "unfrozen" << std::setw(12) << "params" << "unfrozen_params\n";
  for (const auto& [id, m] : plan.masks) {
    const LayerSpec& l = net.layers.at(id);
    os << std::left << std::setw(7) << id << std::setw(8) << to_string(l.kind) << std::setw(8) << l.out_channels
       << std::setw(10) << m.popcount() << std::setw(12) << l.weight_count() << m.popcount() * l.channel_size() << "\n";
  }
  const std::size_t total = net.total_weight_params();
  os << "unfrozen " << plan.unfrozen_params(net) << " / " << total << " parameters (achieved ratio "
     << std::setprecision(4) << (total ? static_cast<double>(plan.unfrozen_params(net)) / total : 0.0) << ")\n";
  return os.str();
}

}  // namespace efqat
