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

#include "doctest.h"
#include "efqat/autograd.hpp"
#include "efqat/cost_model.hpp"
#include "efqat/error.hpp"
#include "efqat/model.hpp"
#include "freeze_oracle.hpp"
#include "oracles.hpp"

using namespace efqat;

namespace {

const double kRatios[] = {0.0, 0.05, 0.1, 0.25, 0.5, 1.0};

std::uint64_t fl(double r, std::uint64_t c) { return static_cast<std::uint64_t>(std::floor(r * c + 1e-6)); }

FreezePlan filled_plan(const NetSpec& net, bool unfrozen) {
  FreezePlan p;
  for (int id : net.quantized_layers()) p.masks[id] = RowMask::filled(id, net.layers[id].out_channels, unfrozen);
  return p;
}

// One forward/backward of `model` under `plan`; returns the live counters.
std::map<int, MacTally> live_counts(Model& model, const FreezePlan& plan, std::size_t batch, oracle::Gen& g) {
  Shape s{batch};
  s.insert(s.end(), model.net().input.begin(), model.net().input.end());
  const Tensor x(s, g.floats(shape_numel(s), -1, 1));
  std::vector<int> labels(batch);
  for (auto& y : labels) y = static_cast<int>(g.below(model.net().num_classes()));
  Tape tape;
  ForwardOptions opt;
  opt.training = true;
  opt.masks = &plan.masks;
  Var loss = cross_entropy(model.forward(tape, x, opt), labels);
  tape.backward(loss);
  return tape.mac_ledger();
}

}  // namespace

TEST_CASE("ops_linear_bwd: worked values") {
  CHECK(ops_linear_bwd(4, 8, 1, 0.25) == BackwardMacs{8, 32});
  CHECK(ops_linear_bwd(4, 8, 1, 0.25).total() <= 1.25 * 32);
  CHECK(ops_linear_bwd(7, 9, 5, 0.0) == BackwardMacs{0, 7 * 9 * 5});
  CHECK(ops_linear_bwd(7, 9, 5, 1.0).total() == 2u * 7 * 9 * 5);
  CHECK_THROWS_AS(ops_linear_bwd(1, 1, 1, 1.5), ConfigError);
}

TEST_CASE("ops_conv_bwd: worked values and bound") {
  CHECK(ops_conv_bwd(2, 4, 3, 5, 5, 1, 0.5) == BackwardMacs{900, 1800});
  CHECK(ops_conv_bwd(2, 4, 3, 5, 5, 1, 0.0).weight == 0);
  oracle::Gen g(51);
  for (int i = 0; i < 200; ++i) {
    const std::uint64_t ci = g.range(1, 64), co = g.range(1, 64), k = g.range(1, 5), h = g.range(1, 16),
                        w = g.range(1, 16), n = g.range(1, 8);
    std::uint64_t prev = 0;
    for (double r : kRatios) {
      const BackwardMacs b = ops_conv_bwd(ci, co, k, h, w, n, r);
      const double dense_input = static_cast<double>(n * k * k * ci * co * h * w);
      CHECK(b.input == n * k * k * ci * co * h * w);
      CHECK(b.weight == n * k * k * ci * fl(r, co) * h * w);
      CHECK(static_cast<double>(b.total()) <= (1 + r) * dense_input);
      CHECK(b.total() >= prev);  // nondecreasing in r
      prev = b.total();
    }
  }
}

TEST_CASE("network_report: speedup endpoints and LWPN half") {
  const NetSpec cnn = NetSpec::reference_cnn(12, 10, 64);
  CHECK(network_report(cnn, filled_plan(cnn, true), 64).speedup == 1.0);
  const OpsReport zero = network_report(cnn, filled_plan(cnn, false), 64);
  CHECK(zero.speedup == 2.0);
  CHECK(zero.dense_total == 2 * zero.total);

  // Four equal 4×4 layers with two frozen: dense 4·32 = 128, frozen 4·16 + 2·16 = 96.
  const NetSpec mlp = NetSpec::mlp(4, {4, 4, 4}, 4);
  FreezePlan half = filled_plan(mlp, true);
  half.masks.at(0) = RowMask::filled(0, 4, false);
  half.masks.at(4) = RowMask::filled(4, 4, false);
  const OpsReport rep = network_report(mlp, half, 1);
  CHECK(rep.total == 96);
  CHECK(rep.dense_total == 128);
  CHECK(rep.speedup == doctest::Approx(4.0 / 3.0).epsilon(1e-15));

  FreezePlan bad = filled_plan(mlp, true);
  bad.masks.at(2) = RowMask::filled(2, 3, true);
  CHECK_THROWS_AS(network_report(mlp, bad, 1), ConfigError);
  bad = filled_plan(mlp, true);
  bad.masks[1] = RowMask::filled(1, 4, true);  // relu layer
  CHECK_THROWS_AS(network_report(mlp, bad, 1), ConfigError);
}

TEST_CASE("ratio grid: speedup decreases monotonically within [1, 2]") {
  const NetSpec cnn = NetSpec::reference_cnn(12, 32, 64);
  double prev = 2.0 + 1e-12;
  for (double r : kRatios) {
    const OpsReport rep = ratio_report(cnn, r, 64);
    CHECK(rep.speedup <= prev);
    CHECK(rep.speedup >= 1.0);
    CHECK(rep.speedup <= 2.0);
    prev = rep.speedup;
  }
  CHECK(ratio_report(cnn, 0.0, 64).speedup == 2.0);
  CHECK(ratio_report(cnn, 1.0, 64).speedup == 1.0);
}

TEST_CASE("reconcile: live counters match the closed form") {
  oracle::Gen g(52);
  Model model(NetSpec::reference_cnn(12, 10, 16), 3);
  SUBCASE("dense run") {
    const FreezePlan dense = filled_plan(model.net(), true);
    OpsReport rep = network_report(model.net(), dense, 4);
    CHECK(reconcile(rep, live_counts(model, dense, 4, g)).empty());
    for (const LayerOps& l : rep.layers) CHECK(l.measured == l.theoretical);
  }
  SUBCASE("masked run with planner output") {
    freeze_oracle::Weights w(model.net());
    w.randomize(g, false);
    for (double r : kRatios) {
      for (FreezeMode mode : {FreezeMode::kCwpl, FreezeMode::kCwpn, FreezeMode::kLwpn}) {
        const FreezePlan p = make_plan(mode, model.net(), w.set_view(), r);
        OpsReport rep = network_report(model.net(), p, 3);
        CHECK(reconcile(rep, live_counts(model, p, 3, g)).empty());
      }
    }
  }
  SUBCASE("single linear layer, 2 of 8 rows") {
    Model lin(NetSpec::mlp(4, {}, 8), 1);
    FreezePlan p = filled_plan(lin.net(), false);
    p.masks.at(0).rows[1] = p.masks.at(0).rows[6] = 1;
    OpsReport rep = network_report(lin.net(), p, 1);
    CHECK(rep.total == 40);
    CHECK(reconcile(rep, live_counts(lin, p, 1, g)).empty());
  }
  SUBCASE("a corrupted counter surfaces as a diff") {
    const FreezePlan dense = filled_plan(model.net(), true);
    OpsReport rep = network_report(model.net(), dense, 2);
    auto counts = live_counts(model, dense, 2, g);
    counts.at(4).weight_grad += 7;
    const auto diffs = reconcile(rep, counts);
    REQUIRE(diffs.size() == 1);
    CHECK(diffs[0].layer == 4);
    CHECK(diffs[0].weight_delta == 7);
    CHECK(diffs[0].input_delta == 0);
    OpsReport again = network_report(model.net(), dense, 2);
    CHECK_THROWS_AS(reconcile_or_throw(again, counts), ReconcileError);
  }
}

TEST_CASE("live counters equal the closed form over a layer grid (property)") {
  oracle::Gen g(53);
  for (int cfg = 0; cfg < 24; ++cfg) {
    const bool conv = cfg % 2 == 0;
    const std::size_t ci = g.range(1, 6), co = g.range(2, 20), n = g.range(1, 3);
    for (double r : kRatios) {
      CAPTURE(cfg);
      CAPTURE(r);
      RowMask mask = RowMask::filled(0, co, false);
      const std::size_t keep = fl(r, co);
      for (std::size_t i = 0; i < keep; ++i) mask.rows[(i * 7 + cfg) % co] = 1;
      while (mask.popcount() < keep) mask.rows[g.below(co)] = 1;
      Parameter w("w", Tensor(conv ? Shape{co, ci, 3, 3} : Shape{co, ci}, g.floats(co * ci * (conv ? 9 : 1), -1, 1)));
      Tape tape;
      BackwardMacs expect;
      if (conv) {
        const std::size_t h = g.range(3, 7), wd = g.range(3, 7), stride = g.range(1, 2);
        const Tensor x({n, ci, h, wd}, g.floats(n * ci * h * wd, -1, 1));
        Var y = conv2d(tape.constant(x), tape.param(w), std::nullopt, stride, 1, &mask, 0);
        expect = ops_conv_bwd(ci, co, 3, y.shape()[2], y.shape()[3], n, r);
        tape.backward(sum(y));
      } else {
        const Tensor x({n, ci}, g.floats(n * ci, -1, 1));
        tape.backward(sum(linear(tape.constant(x), tape.param(w), std::nullopt, &mask, 0)));
        expect = ops_linear_bwd(ci, co, n, r);
      }
      const MacTally t = tape.mac_ledger().at(0);
      CHECK(t.weight_grad == expect.weight);
      CHECK(t.input_grad == expect.input);
    }
  }
}

TEST_CASE("render_table prints totals and speedup") {
  const std::string t = render_table(ratio_report(NetSpec::reference_cnn(12, 32, 64), 0.0, 64));
  CHECK(t.find("speedup 2.0000") != std::string::npos);
  CHECK(t.find("conv") != std::string::npos);
}
