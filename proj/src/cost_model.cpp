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

#include "efqat/cost_model.hpp"

#include <iomanip>
#include <sstream>

#include "efqat/error.hpp"

namespace efqat {

BackwardMacs ops_linear_bwd(std::uint64_t c_in, std::uint64_t c_out, std::uint64_t m, double r) {
  if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("ratio must lie in [0, 1]");
  return {m * c_in * floor_ratio(r, c_out), m * c_in * c_out};
}

BackwardMacs ops_conv_bwd(std::uint64_t c_in, std::uint64_t c_out, std::uint64_t k, std::uint64_t h_out,
                          std::uint64_t w_out, std::uint64_t n, double r) {
  if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("ratio must lie in [0, 1]");
  const std::uint64_t per_row = n * k * k * c_in * h_out * w_out;
  return {per_row * floor_ratio(r, c_out), per_row * c_out};
}

BackwardMacs layer_bwd_macs(const LayerSpec& layer, std::uint64_t batch, std::uint64_t unfrozen_rows) {
  if (!layer.has_weights()) return {};
  const std::uint64_t per_row = batch * layer.channel_size() * layer.spatial_out();
  return {per_row * unfrozen_rows, per_row * layer.out_channels};
}

namespace {

void finish(OpsReport& rep) {
  rep.total = 0;
  rep.dense_total = 0;
  for (const LayerOps& l : rep.layers) {
    rep.total += l.theoretical;
    rep.dense_total += 2 * l.input_macs;  // dense weight-grad cost equals the input-grad cost
  }
  rep.speedup = rep.total ? static_cast<double>(rep.dense_total) / static_cast<double>(rep.total) : 1.0;
}

LayerOps layer_ops(const NetSpec& net, int id, std::size_t batch, std::size_t unfrozen) {
  const LayerSpec& l = net.layers[id];
  const BackwardMacs m = layer_bwd_macs(l, batch, unfrozen);
  LayerOps op;
  op.layer = id;
  op.kind = l.kind;
  op.c_out = l.out_channels;
  op.unfrozen = unfrozen;
  op.input_macs = m.input;
  op.weight_macs = m.weight;
  op.theoretical = m.total();
  return op;
}

}  // namespace

OpsReport network_report(const NetSpec& net, const FreezePlan& plan, std::size_t batch) {
  for (const auto& [id, mask] : plan.masks) {
    if (id < 0 || static_cast<std::size_t>(id) >= net.layers.size() || !net.layers[id].has_weights()) {
      throw ConfigError("freeze plan names layer " + std::to_string(id) + " which has no weights");
    }
    if (mask.size() != net.layers[id].out_channels) {
      throw ConfigError("freeze plan mask for layer " + std::to_string(id) + " has " + std::to_string(mask.size()) +
                        " rows, layer has " + std::to_string(net.layers[id].out_channels));
    }
  }
  OpsReport rep;
  rep.mode = to_string(plan.mode);
  rep.ratio = plan.ratio;
  rep.batch = batch;
  for (int id : net.weight_layers()) {
    const RowMask* m = plan.mask(id);
    rep.layers.push_back(layer_ops(net, id, batch, m ? m->popcount() : net.layers[id].out_channels));
  }
  finish(rep);
  return rep;
}

OpsReport ratio_report(const NetSpec& net, double r, std::size_t batch) {
  if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("ratio must lie in [0, 1]");
  OpsReport rep;
  rep.mode = "cwpl";
  rep.ratio = r;
  rep.batch = batch;
  for (int id : net.weight_layers()) {
    const LayerSpec& l = net.layers[id];
    rep.layers.push_back(layer_ops(net, id, batch, l.quantize ? floor_ratio(r, l.out_channels) : l.out_channels));
  }
  finish(rep);
  return rep;
}

std::vector<ReconcileDiff> reconcile(OpsReport& report, const std::map<int, MacTally>& measured) {
  std::vector<ReconcileDiff> diffs;
  for (LayerOps& l : report.layers) {
    auto it = measured.find(l.layer);
    const MacTally tally = it == measured.end() ? MacTally{} : it->second;
    l.has_measured = true;
    l.measured = tally.backward();
    const auto di = static_cast<std::int64_t>(tally.input_grad) - static_cast<std::int64_t>(l.input_macs);
    const auto dw = static_cast<std::int64_t>(tally.weight_grad) - static_cast<std::int64_t>(l.weight_macs);
    if (di != 0 || dw != 0) diffs.push_back({l.layer, di, dw});
  }
  return diffs;
}

void reconcile_or_throw(OpsReport& report, const std::map<int, MacTally>& measured) {
  const auto diffs = reconcile(report, measured);
  if (diffs.empty()) return;
  std::ostringstream os;
  os << "MAC reconciliation failed:";
  for (const auto& d : diffs) {
    os << " layer " << d.layer << " (input " << std::showpos << d.input_delta << ", weight " << d.weight_delta
       << std::noshowpos << ")";
  }
  throw ReconcileError(os.str());
}

std::string render_table(const OpsReport& r) {
  std::ostringstream os;
  os << "mode " << r.mode << "  ratio " << r.ratio << "  batch " << r.batch << "\n";
  os << std::left << std::setw(7) << "layer" << std::setw(8) << "kind" << std::setw(7) << "C_out" << std::setw(10)
     << "unfrozen" << std::setw(16) << "input_macs" << std::setw(16) << "weight_macs" << std::setw(16) << "total";
  const bool measured = !r.layers.empty() && r.layers.front().has_measured;
  if (measured) os << "measured";
  os << "\n";
  for (const LayerOps& l : r.layers) {
    os << std::left << std::setw(7) << l.layer << std::setw(8) << to_string(l.kind) << std::setw(7) << l.c_out
       << std::setw(10) << l.unfrozen << std::setw(16) << l.input_macs << std::setw(16) << l.weight_macs
       << std::setw(16) << l.theoretical;
    if (measured) os << l.measured;
    os << "\n";
  }
  os << "total " << r.total << "  dense " << r.dense_total << "  speedup " << std::fixed << std::setprecision(4)
     << r.speedup << "\n";
  return os.str();
}

}  // namespace efqat
