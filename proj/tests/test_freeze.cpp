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

#include <algorithm>
#include <cmath>
#include <tuple>

#include "doctest.h"
#include "efqat/error.hpp"
#include "efqat/freeze.hpp"
#include "freeze_oracle.hpp"
#include "oracles.hpp"

using namespace efqat;
using freeze_oracle::Weights;

TEST_CASE("block_importance: worked values") {
  const std::vector<float> a{1, -2, 3}, z(5, 0.0f), b{-0.5f, 0.25f, 0.5f, 0.75f};
  CHECK(block_importance(a) == 2.0);
  CHECK(block_importance(z) == 0.0);
  CHECK(block_importance(b) == 0.5);
  CHECK_THROWS_AS(block_importance(std::span<const float>()), ContractError);
}

TEST_CASE("floor_ratio") {
  CHECK(floor_ratio(0.0, 64) == 0);
  CHECK(floor_ratio(1.0, 64) == 64);
  CHECK(floor_ratio(0.25, 8) == 2);
  CHECK(floor_ratio(0.05, 64) == 3);
  CHECK(floor_ratio(0.1, 30) == 3);
  CHECK(floor_ratio(2.0 / 3.0, 3) == 2);
  CHECK(floor_ratio(0.999, 10) == 9);
}

TEST_CASE("plan_cwpl: worked values") {
  const NetSpec net = NetSpec::mlp(1, {3}, 2);
  Weights w(net);
  w.set(0, {3, 1, 2});
  w.set(2, {1, 1, 1, 1, 1, 1});
  CHECK(plan_cwpl(net, w.set_view(), 0.0).masks.at(0).none());
  CHECK(plan_cwpl(net, w.set_view(), 1.0).masks.at(2).all());
  const FreezePlan p = plan_cwpl(net, w.set_view(), 2.0 / 3.0);
  CHECK(p.masks.at(0).rows == std::vector<std::uint8_t>{1, 0, 1});
  CHECK(p.masks.at(2).popcount() == 1);
  CHECK(p.masks.at(2).rows == std::vector<std::uint8_t>{1, 0});  // tie goes to the lower channel
}

TEST_CASE("plan_cwpn: worked values") {
  const NetSpec net = NetSpec::mlp(2, {2}, 2);
  Weights w(net);
  w.set(0, {5, 5, 1, 1});
  w.set(2, {4, 4, 3, 3});
  const FreezePlan p = plan_cwpn(net, w.set_view(), 0.5);
  CHECK(p.masks.at(0).rows == std::vector<std::uint8_t>{1, 0});
  CHECK(p.masks.at(2).rows == std::vector<std::uint8_t>{1, 0});
  CHECK(plan_cwpn(net, w.set_view(), 1.0).unfrozen_params(net) == 8);
  // Budget floor(0.2·8) = 1 < 2 parameters of the top channel.
  CHECK(plan_cwpn(net, w.set_view(), 0.2).unfrozen_params(net) == 0);
}

TEST_CASE("plan_lwpn: worked values") {
  const NetSpec net = NetSpec::mlp(2, {2, 2}, 2);
  Weights w(net);
  w.fill(0, 0.2f);
  w.fill(2, 0.9f);
  w.fill(4, 0.5f);
  CHECK(plan_lwpn(net, w.set_view(), 0.0).unfrozen_params(net) == 0);
  const FreezePlan p = plan_lwpn(net, w.set_view(), 1.0 / 3.0);
  CHECK(p.masks.at(0).none());
  CHECK(p.masks.at(2).all());
  CHECK(p.masks.at(4).none());
  const FreezePlan all = plan_lwpn(net, w.set_view(), 1.0);
  for (const auto& [id, m] : all.masks) CHECK(m.all());
}

TEST_CASE("plans validate ratio and weights") {
  const NetSpec net = NetSpec::mlp(2, {2}, 2);
  Weights w(net);
  CHECK_THROWS_AS(plan_cwpl(net, w.set_view(), 1.5), ConfigError);
  CHECK_THROWS_AS(plan_cwpn(net, w.set_view(), -0.1), ConfigError);
  WeightSet missing = w.set_view();
  missing.erase(2);
  CHECK_THROWS_AS(plan_lwpn(net, missing, 0.5), ConfigError);
}

TEST_CASE("planner properties over random networks (property)") {
  oracle::Gen g(41);
  const double ratios[] = {0.0, 0.05, 0.1, 0.25, 0.5, 1.0};
  for (int trial = 0; trial < 60; ++trial) {
    const NetSpec net = freeze_oracle::random_net(g);
    Weights w(net);
    w.randomize(g, trial % 3 == 0);  // every third net has heavy ties
    for (double r : ratios) {
      CAPTURE(trial);
      CAPTURE(r);
      for (FreezeMode mode : {FreezeMode::kCwpl, FreezeMode::kCwpn, FreezeMode::kLwpn}) {
        const FreezePlan p = make_plan(mode, net, w.set_view(), r);
        CHECK(p.masks == freeze_oracle::plan(mode, net, w, r));
        // determinism
        CHECK(make_plan(mode, net, w.set_view(), r).masks == p.masks);
        const std::size_t budget = static_cast<std::size_t>(std::floor(r * net.total_weight_params() + 1e-6));
        if (mode == FreezeMode::kCwpl) {
          for (const auto& [id, m] : p.masks)
            CHECK(m.popcount() == static_cast<std::size_t>(std::floor(r * net.layers[id].out_channels + 1e-6)));
        } else {
          CHECK(p.unfrozen_params(net) <= budget);
        }
        if (mode == FreezeMode::kLwpn)
          for (const auto& [id, m] : p.masks) CHECK((m.all() || m.none()));
      }
    }
  }
}

TEST_CASE("global positive scaling leaves every plan unchanged (property)") {
  oracle::Gen g(42);
  for (int trial = 0; trial < 40; ++trial) {
    const NetSpec net = freeze_oracle::random_net(g);
    Weights w(net);
    // Exact ties survive float scaling only when the scaling itself is exact,
    // so tie-heavy weights use powers of two and continuous weights any c > 0.
    const bool ties = trial % 2 == 0;
    w.randomize(g, ties);
    Weights scaled = w;
    const float c = ties ? std::ldexp(1.0f, static_cast<int>(g.range(0, 12)) - 6) : static_cast<float>(g.uniform(0.05, 20.0));
    scaled.scale(c);
    for (double r : {0.05, 0.1, 0.25, 0.5}) {
      for (FreezeMode mode : {FreezeMode::kCwpl, FreezeMode::kCwpn, FreezeMode::kLwpn}) {
        CAPTURE(c);
        CHECK(make_plan(mode, net, w.set_view(), r).masks == make_plan(mode, net, scaled.set_view(), r).masks);
      }
    }
  }
}

TEST_CASE("maybe_refresh: schedule") {
  const NetSpec net = NetSpec::mlp(4, {8}, 4);
  oracle::Gen g(43);
  Weights w(net);
  w.randomize(g, false);

  FreezePlan p = make_plan(FreezeMode::kCwpl, net, w.set_view(), 0.25, 4096);
  CHECK_FALSE(maybe_refresh(p, 4095, net, w.set_view()));
  CHECK(p.samples_since_refresh == 4095);
  CHECK(maybe_refresh(p, 1, net, w.set_view()));
  CHECK(p.samples_since_refresh == 0);
  CHECK(p.refreshes == 1);

  FreezePlan every = make_plan(FreezeMode::kCwpl, net, w.set_view(), 0.25, 1);
  for (int i = 1; i <= 5; ++i) {
    CHECK(maybe_refresh(every, 64, net, w.set_view()));
    CHECK(every.refreshes == static_cast<std::size_t>(i));
  }

  FreezePlan never = make_plan(FreezeMode::kCwpl, net, w.set_view(), 0.25, kNeverRefresh);
  CHECK_FALSE(maybe_refresh(never, 1u << 30, net, w.set_view()));
}

TEST_CASE("maybe_refresh: a boosted frozen channel becomes unfrozen") {
  const NetSpec net = NetSpec::mlp(4, {8}, 4);
  oracle::Gen g(44);
  Weights w(net);
  w.randomize(g, false);
  FreezePlan p = make_plan(FreezeMode::kCwpl, net, w.set_view(), 0.25, 64);
  const RowMask before = p.masks.at(0);
  std::size_t frozen = 0;
  while (before[frozen]) ++frozen;
  w.scale_row(0, frozen, 10.0f);
  REQUIRE(maybe_refresh(p, 64, net, w.set_view()));
  CHECK(p.masks.at(0)[frozen]);
  CHECK(p.masks.at(0).popcount() == before.popcount());
  CHECK(p.masks == freeze_oracle::plan(FreezeMode::kCwpl, net, w, 0.25));
}

TEST_CASE("refresh is idempotent without weight changes (property)") {
  oracle::Gen g(45);
  for (int trial = 0; trial < 40; ++trial) {
    const NetSpec net = freeze_oracle::random_net(g);
    Weights w(net);
    w.randomize(g, trial % 2 == 0);
    for (FreezeMode mode : {FreezeMode::kCwpl, FreezeMode::kCwpn, FreezeMode::kLwpn}) {
      FreezePlan p = make_plan(mode, net, w.set_view(), 0.25, 1);
      const FreezePlan start = p;
      REQUIRE(maybe_refresh(p, 1, net, w.set_view()));
      const FreezePlan once = p;
      REQUIRE(maybe_refresh(p, 1, net, w.set_view()));
      CHECK(once.same_selection(start));
      CHECK(p.same_selection(once));
    }
  }
}

TEST_CASE("plan_report lists per-layer counts") {
  const NetSpec net = NetSpec::mlp(2, {2}, 2);
  Weights w(net);
  w.set(0, {5, 5, 1, 1});
  w.set(2, {4, 4, 3, 3});
  const std::string r = plan_report(plan_cwpn(net, w.set_view(), 0.5), net);
  CHECK(r.find("unfrozen 4 / 8 parameters") != std::string::npos);
}
