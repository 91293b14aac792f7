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

#include <cmath>

#include "doctest.h"
#include "efqat/error.hpp"
#include "efqat/optim.hpp"
#include "oracles.hpp"

using namespace efqat;

TEST_CASE("sgd: worked values") {
  Parameter p("p", Tensor::from_rows({{1, -2}, {3, 4}}));
  p.grad = Tensor::from_rows({{5, 6}, {7, 8}});
  const Tensor start = p.value;

  Sgd zero_lr(SgdConfig{0.0, 0.9, 1e-4});
  zero_lr.step(p);
  CHECK(p.value == start);

  Sgd plain(SgdConfig{0.1, 0.0, 0.0});
  Parameter q("q", Tensor::from_rows({{1}}));
  q.grad = Tensor::from_rows({{1}});
  plain.step(q);
  CHECK(q.value[0] == doctest::Approx(0.9).epsilon(1e-7));

  Sgd masked(SgdConfig{0.1, 0.9, 1e-4});
  const RowMask rows{0, {0, 1}};
  masked.step(p, &rows);
  CHECK(p.value.at(0, 0) == start.at(0, 0));
  CHECK(p.value.at(0, 1) == start.at(0, 1));
  CHECK(p.value.at(1, 0) != start.at(1, 0));
  CHECK(masked.buffers().at("p").at(0, 0) == 0.0f);
  CHECK(masked.buffers().at("p").at(0, 1) == 0.0f);

  const RowMask bad{0, {1, 1, 1}};
  CHECK_THROWS_AS(masked.step(p, &bad), ConfigError);
}

TEST_CASE("sgd: momentum trajectory matches a scalar oracle with rows toggling (property)") {
  oracle::Gen g(61);
  const SgdConfig cfg{0.05, 0.9, 1e-3};
  Sgd sgd(cfg);
  const std::size_t rows = 4, cols = 3;
  Parameter p("w", Tensor({rows, cols}, g.floats(rows * cols, -1, 1)));
  std::vector<double> ref(p.value.storage().begin(), p.value.storage().end()), buf(rows * cols, 0.0);
  for (int step = 0; step < 40; ++step) {
    p.grad = Tensor({rows, cols}, g.floats(rows * cols, -1, 1));
    RowMask mask = RowMask::filled(0, rows, false);
    for (auto& b : mask.rows) b = g.below(3) != 0;
    const std::vector<float> before = p.value.storage();
    sgd.step(p, &mask);
    for (std::size_t i = 0; i < rows * cols; ++i) {
      if (!mask[i / cols]) {
        CHECK(p.value[i] == before[i]);  // frozen rows are bit-identical
        continue;
      }
      const double d = p.grad[i] + cfg.weight_decay * ref[i];
      buf[i] = cfg.momentum * buf[i] + d;
      ref[i] -= cfg.lr * buf[i];
      CHECK(p.value[i] == doctest::Approx(ref[i]).epsilon(1e-5));
    }
  }
}

TEST_CASE("adam: first step, zero gradients and gating") {
  Adam adam(AdamConfig{1e-3, 0.9, 0.999, 1e-8});
  std::vector<float> v{0.5f, -0.25f, 2.0f};
  const std::vector<float> g{1.0f, -3.0f, 0.0f};
  adam.step("k", v, g);
  // Bias-corrected first step moves each element by lr·sign(g).
  CHECK(v[0] == doctest::Approx(0.5 - 1e-3).epsilon(1e-6));
  CHECK(v[1] == doctest::Approx(-0.25 + 1e-3).epsilon(1e-6));
  CHECK(v[2] == 2.0f);

  std::vector<float> fixed{1.0f, 2.0f};
  const std::vector<float> zeros(2, 0.0f);
  for (int i = 0; i < 10; ++i) adam.step("z", fixed, zeros);
  CHECK(fixed == std::vector<float>{1.0f, 2.0f});

  std::vector<float> gated{1.0f, 1.0f};
  const std::vector<std::uint8_t> gate{1, 0};
  adam.step("gated", gated, std::vector<float>{1.0f, 1.0f}, &gate);
  CHECK(gated[0] != 1.0f);
  CHECK(gated[1] == 1.0f);
  CHECK(adam.slots().at("gated").t == std::vector<std::uint64_t>{1, 0});
  CHECK(adam.slots().at("gated").m[1] == 0.0f);
}

TEST_CASE("adam: trajectory matches a double oracle (property)") {
  oracle::Gen g(62);
  const AdamConfig cfg{2e-3, 0.9, 0.999, 1e-8};
  Adam adam(cfg);
  std::vector<float> v = g.floats(5, -1, 1);
  std::vector<double> ref(v.begin(), v.end()), m(5, 0.0), s(5, 0.0);
  std::vector<int> t(5, 0);
  for (int step = 0; step < 50; ++step) {
    const std::vector<float> grad = g.floats(5, -2, 2);
    std::vector<std::uint8_t> gate(5);
    for (auto& b : gate) b = g.below(4) != 0;
    adam.step("x", v, grad, &gate);
    for (std::size_t i = 0; i < 5; ++i) {
      if (!gate[i]) continue;
      ++t[i];
      m[i] = static_cast<float>(cfg.beta1 * m[i] + (1 - cfg.beta1) * grad[i]);
      s[i] = static_cast<float>(cfg.beta2 * s[i] + (1 - cfg.beta2) * static_cast<double>(grad[i]) * grad[i]);
      const double mh = m[i] / (1 - std::pow(cfg.beta1, t[i])), vh = s[i] / (1 - std::pow(cfg.beta2, t[i]));
      ref[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
    for (std::size_t i = 0; i < 5; ++i) CHECK(v[i] == doctest::Approx(ref[i]).epsilon(1e-5));
  }
}
