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

// Closed-form backward MAC counts for linear and conv layers.
//
//   linear: weight = m·C_in·floor(r·C_out),            input = m·C_in·C_out
//   conv:   weight = N·k²·C_in·floor(r·C_out)·H_out·W_out, input = N·k²·C_in·C_out·H_out·W_out
//
// Only matmul MACs are modeled; normalization and elementwise work is not.

#ifndef EFQAT_COST_MODEL_HPP_
#define EFQAT_COST_MODEL_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "efqat/freeze.hpp"
#include "efqat/kernels.hpp"
#include "efqat/netspec.hpp"

namespace efqat {

struct BackwardMacs {
  std::uint64_t weight = 0;
  std::uint64_t input = 0;
  std::uint64_t total() const noexcept { return weight + input; }
  bool operator==(const BackwardMacs&) const = default;
};

BackwardMacs ops_linear_bwd(std::uint64_t c_in, std::uint64_t c_out, std::uint64_t m, double r);
BackwardMacs ops_conv_bwd(std::uint64_t c_in, std::uint64_t c_out, std::uint64_t k, std::uint64_t h_out,
                          std::uint64_t w_out, std::uint64_t n, double r);
/// Same counts with an explicit number of unfrozen rows instead of floor(r·C_out).
BackwardMacs layer_bwd_macs(const LayerSpec& layer, std::uint64_t batch, std::uint64_t unfrozen_rows);

struct LayerOps {
  int layer = -1;
  LayerKind kind = LayerKind::kLinear;
  std::size_t c_out = 0;
  std::size_t unfrozen = 0;
  std::uint64_t input_macs = 0;
  std::uint64_t weight_macs = 0;
  std::uint64_t theoretical = 0;
  bool has_measured = false;
  std::uint64_t measured = 0;
};

struct OpsReport {
  std::string mode;
  double ratio = 1.0;
  std::size_t batch = 1;
  std::vector<LayerOps> layers;
  std::uint64_t total = 0;
  std::uint64_t dense_total = 0;  // same network with every row unfrozen
  double speedup = 1.0;           // dense_total / total
};

/// Counts from the actual mask popcounts. Weight layers the plan does not
/// cover are counted dense. Throws ConfigError on plan/net mismatch.
OpsReport network_report(const NetSpec& net, const FreezePlan& plan, std::size_t batch);
/// Per-layer floor(r·C_out) rows on every quantized layer.
OpsReport ratio_report(const NetSpec& net, double r, std::size_t batch);

struct ReconcileDiff {
  int layer = -1;
  std::int64_t input_delta = 0;   // measured - modeled
  std::int64_t weight_delta = 0;
};

/// Compares a report against live per-layer counters; fills the measured
/// fields of `report` and returns every mismatch (empty when exact).
std::vector<ReconcileDiff> reconcile(OpsReport& report, const std::map<int, MacTally>& measured);
/// Throws ReconcileError listing each mismatching layer.
void reconcile_or_throw(OpsReport& report, const std::map<int, MacTally>& measured);

std::string render_table(const OpsReport& report);

}  // namespace efqat

#endif  // EFQAT_COST_MODEL_HPP_
