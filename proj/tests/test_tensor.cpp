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
#include <functional>

#include "doctest.h"
#include "efqat/autograd.hpp"
#include "efqat/error.hpp"
#include "efqat/kernels.hpp"
#include "oracles.hpp"

using namespace efqat;

namespace {

Tensor random_tensor(oracle::Gen& g, Shape s, double lo = -1.0, double hi = 1.0) {
  const std::size_t n = shape_numel(s);
  return Tensor(std::move(s), g.floats(n, lo, hi));
}

RowMask random_mask(oracle::Gen& g, std::size_t c_out, std::size_t popcount) {
  RowMask m = RowMask::filled(0, c_out, false);
  while (m.popcount() < popcount) m.rows[g.below(c_out)] = 1;
  return m;
}

// Central differences in double over a flat parameter vector.
std::vector<double> numeric_grad(const std::function<double(const std::vector<double>&)>& f, std::vector<double> p,
                                 double h = 1e-6) {
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double up = f(p);
    p[i] = keep - h;
    const double down = f(p);
    p[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

void check_rel(const Tensor& analytic, const std::vector<double>& numeric, double tol = 1e-3) {
  REQUIRE(analytic.numel() == numeric.size());
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double scale = std::max({std::fabs(a), std::fabs(n), 1e-3});
    INFO("element " << i << ": analytic " << a << ", numeric " << n);
    CHECK(std::fabs(a - n) / scale <= tol);
  }
}

std::vector<double> to_double(const Tensor& t) { return {t.storage().begin(), t.storage().end()}; }

}  // namespace

TEST_CASE("matmul: identity, hand sum and triple-loop oracle") {
  const Tensor a = Tensor::from_rows({{1.5f, -2}, {0.25f, 4}});
  CHECK(matmul(Tensor::from_rows({{1, 0}, {0, 1}}), a) == a);
  CHECK(matmul(Tensor::from_rows({{1, 2}, {3, 4}}), Tensor::from_rows({{1}, {1}})) == Tensor::from_rows({{3}, {7}}));

  oracle::Gen g(11);
  const Tensor x = random_tensor(g, {5, 7}), y = random_tensor(g, {7, 3});
  MacTally macs;
  const Tensor c = matmul(x, y, &macs);
  const auto ref = oracle::matmul(x.storage(), y.storage(), 5, 7, 3);
  REQUIRE(c.shape() == Shape{5, 3});
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::fabs(c[i] - ref[i]) <= 1e-6);
  CHECK(macs.forward == 5u * 7 * 3);
}

TEST_CASE("matmul: dimension error names both shapes") {
  try {
    matmul(Tensor({2, 3}), Tensor({4, 5}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
}

TEST_CASE("linear_backward: dense oracle, frozen rows and MAC count") {
  oracle::Gen g(12);
  const std::size_t m = 6, c_in = 5, c_out = 8;
  const Tensor dy = random_tensor(g, {m, c_out}), x = random_tensor(g, {m, c_in}), w = random_tensor(g, {c_out, c_in});

  const RowMask all = RowMask::filled(3, c_out, true), none = RowMask::filled(3, c_out, false);
  const GradPair dense = linear_backward(dy, x, w, nullptr);
  const GradPair full = linear_backward(dy, x, w, &all);
  const GradPair frozen = linear_backward(dy, x, w, &none);

  // dW = dYᵀ·X, dX = dY·W
  const auto dw_ref = oracle::matmul(transpose2d(dy).storage(), x.storage(), c_out, m, c_in);
  const auto dx_ref = oracle::matmul(dy.storage(), w.storage(), m, c_out, c_in);
  for (std::size_t i = 0; i < dw_ref.size(); ++i) CHECK(std::fabs(full.dw[i] - dw_ref[i]) <= 1e-6);
  for (std::size_t i = 0; i < dx_ref.size(); ++i) CHECK(std::fabs(full.dx[i] - dx_ref[i]) <= 1e-6);

  CHECK(full.dw == dense.dw);
  CHECK(full.dx == dense.dx);
  CHECK(frozen.dw == Tensor::zeros({c_out, c_in}));
  CHECK(frozen.dx == full.dx);

  SUBCASE("C_in=4, C_out=8, m=1, two unfrozen rows record 40 MACs") {
    const RowMask two{0, {0, 1, 0, 0, 0, 1, 0, 0}};
    MacTally t;
    linear_backward(random_tensor(g, {1, 8}), random_tensor(g, {1, 4}), random_tensor(g, {8, 4}), &two, &t);
    CHECK(t.input_grad == 32);
    CHECK(t.weight_grad == 8);
    CHECK(t.backward() == 40);
  }
  SUBCASE("mask length mismatch is a configuration error") {
    const RowMask bad = RowMask::filled(0, c_out - 1, true);
    CHECK_THROWS_AS(linear_backward(dy, x, w, &bad), ConfigError);
  }
}

TEST_CASE("linear_backward: masked rows are bit-identical to the dense rows (property)") {
  oracle::Gen g(13);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = g.range(1, 9), c_in = g.range(1, 9), c_out = g.range(1, 12);
    const Tensor dy = random_tensor(g, {m, c_out}), x = random_tensor(g, {m, c_in}), w = random_tensor(g, {c_out, c_in});
    const RowMask mask = random_mask(g, c_out, g.range(0, c_out));
    MacTally t;
    const GradPair part = linear_backward(dy, x, w, &mask, &t);
    const GradPair dense = linear_backward(dy, x, w, nullptr);
    CHECK(part.dx == dense.dx);
    for (std::size_t r = 0; r < c_out; ++r)
      for (std::size_t c = 0; c < c_in; ++c) CHECK(part.dw.at(r, c) == (mask[r] ? dense.dw.at(r, c) : 0.0f));
    CHECK(t.weight_grad == m * c_in * mask.popcount());
    CHECK(t.input_grad == m * c_in * c_out);
  }
}

TEST_CASE("conv2d_forward: oracles") {
  oracle::Gen g(14);
  SUBCASE("1×1 kernel reduces to a per-pixel matmul") {
    const Tensor x = random_tensor(g, {1, 3, 4, 4}), w = random_tensor(g, {5, 3, 1, 1});
    const Tensor y = conv2d_forward(x, w, nullptr, 1, 0);
    // y[co, p] = Σ_ci w[co, ci] · x[ci, p]
    const auto ref = oracle::matmul(w.storage(), x.storage(), 5, 3, 16);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::fabs(y[i] - ref[i]) <= 1e-6);
  }
  SUBCASE("zero weights give zero output") {
    const Tensor y = conv2d_forward(random_tensor(g, {2, 2, 5, 5}), Tensor::zeros({3, 2, 3, 3}), nullptr, 1, 1);
    CHECK(y == Tensor::zeros({2, 3, 5, 5}));
  }
  SUBCASE("random 1×2×5×5 input, 4×2×3×3 kernel") {
    const Tensor x = random_tensor(g, {1, 2, 5, 5}), w = random_tensor(g, {4, 2, 3, 3});
    MacTally t;
    const Tensor y = conv2d_forward(x, w, nullptr, 1, 0, &t);
    const auto ref = oracle::conv2d({1, 2, 5, 5, 4, 3, 1, 0}, x.storage(), w.storage());
    REQUIRE(y.shape() == Shape{1, 4, 3, 3});
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::fabs(y[i] - ref[i]) <= 1e-5);
    CHECK(t.forward == 1u * 9 * 2 * 4 * 3 * 3);
  }
  SUBCASE("random geometry with stride and padding (property)") {
    for (int trial = 0; trial < 30; ++trial) {
      oracle::Conv c{g.range(1, 3), g.range(1, 3), g.range(3, 8), g.range(3, 8), g.range(1, 4), g.range(1, 3),
                     g.range(1, 2), g.range(0, 1)};
      if (c.h + 2 * c.pad < c.k || c.w + 2 * c.pad < c.k) continue;
      const Tensor x = random_tensor(g, {c.n, c.c_in, c.h, c.w}), w = random_tensor(g, {c.c_out, c.c_in, c.k, c.k});
      const Tensor y = conv2d_forward(x, w, nullptr, c.stride, c.pad);
      const auto ref = oracle::conv2d(c, x.storage(), w.storage());
      REQUIRE(y.numel() == ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::fabs(y[i] - ref[i]) <= 1e-5);
    }
  }
  SUBCASE("nonpositive output extent is a shape error") {
    CHECK_THROWS_AS(conv2d_forward(Tensor({1, 1, 2, 2}), Tensor({1, 1, 3, 3}), nullptr, 1, 0), DimensionError);
  }
}

TEST_CASE("conv2d_backward: finite differences, frozen rows and MAC count") {
  oracle::Gen g(15);
  const oracle::Conv c{2, 2, 6, 6, 3, 3, 1, 1};
  const Tensor x = random_tensor(g, {c.n, c.c_in, c.h, c.w}), w = random_tensor(g, {c.c_out, c.c_in, c.k, c.k});
  const Tensor dy = random_tensor(g, {c.n, c.c_out, c.h_out(), c.w_out()});
  const RowMask all = RowMask::filled(0, c.c_out, true);
  const GradPair gp = conv2d_backward(dy, x, w, c.stride, c.pad, &all);

  // Scalar loss L = Σ dy ⊙ conv(x, w), evaluated by the double oracle.
  auto loss = [&](const std::vector<float>& xs, const std::vector<float>& ws) {
    const auto y = oracle::conv2d(c, xs, ws);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * dy[i];
    return s;
  };
  auto as_float = [](const std::vector<double>& v) { return std::vector<float>(v.begin(), v.end()); };
  // h=1e-3 as float perturbations; the oracle is linear in each argument so
  // the difference quotient is exact up to float representation of x±h.
  const auto num_w = numeric_grad([&](const std::vector<double>& p) { return loss(x.storage(), as_float(p)); },
                                  to_double(w), 1e-3);
  const auto num_x = numeric_grad([&](const std::vector<double>& p) { return loss(as_float(p), w.storage()); },
                                  to_double(x), 1e-3);
  check_rel(gp.dw, num_w);
  check_rel(gp.dx, num_x);

  const RowMask none = RowMask::filled(0, c.c_out, false);
  const GradPair frozen = conv2d_backward(dy, x, w, c.stride, c.pad, &none);
  CHECK(frozen.dw == Tensor::zeros(w.shape()));
  CHECK(frozen.dx == gp.dx);
  CHECK(conv2d_backward(dy, x, w, c.stride, c.pad, nullptr).dw == gp.dw);

  SUBCASE("k=3, C_in=2, C_out=4, 5×5 output, two unfrozen rows") {
    const RowMask two{0, {1, 0, 0, 1}};
    MacTally t;
    conv2d_backward(random_tensor(g, {1, 4, 5, 5}), random_tensor(g, {1, 2, 5, 5}), random_tensor(g, {4, 2, 3, 3}), 1,
                    1, &two, &t);
    CHECK(t.weight_grad == 900);
    CHECK(t.input_grad == 1800);
    CHECK(t.backward() == 2700);
  }
}

TEST_CASE("conv2d_backward: masked rows are bit-identical to dense rows (property)") {
  oracle::Gen g(16);
  for (int trial = 0; trial < 25; ++trial) {
    const oracle::Conv c{g.range(1, 2), g.range(1, 3), g.range(3, 7), g.range(3, 7), g.range(1, 6), 3, 1, 1};
    const Tensor x = random_tensor(g, {c.n, c.c_in, c.h, c.w}), w = random_tensor(g, {c.c_out, c.c_in, 3, 3});
    const Tensor dy = random_tensor(g, {c.n, c.c_out, c.h_out(), c.w_out()});
    const RowMask mask = random_mask(g, c.c_out, g.range(0, c.c_out));
    MacTally t;
    const GradPair part = conv2d_backward(dy, x, w, 1, 1, &mask, &t);
    const GradPair dense = conv2d_backward(dy, x, w, 1, 1, nullptr);
    CHECK(part.dx == dense.dx);
    const std::size_t per_row = c.c_in * 9;
    for (std::size_t i = 0; i < w.numel(); ++i) CHECK(part.dw[i] == (mask[i / per_row] ? dense.dw[i] : 0.0f));
    const std::uint64_t spatial = c.h_out() * c.w_out();
    CHECK(t.weight_grad == c.n * 9 * c.c_in * mask.popcount() * spatial);
    CHECK(t.input_grad == c.n * 9 * c.c_in * c.c_out * spatial);
  }
}

TEST_CASE("backprop: simple graphs") {
  Parameter px("x", Tensor::from_rows({{1, -2, 3}}));
  Parameter pw("w", Tensor::from_rows({{4, 5, -6}}));
  {
    Tape tape;
    tape.backward(sum(tape.param(px)));
    CHECK(px.grad == Tensor::from_rows({{1, 1, 1}}));
  }
  px.zero_grad();
  {
    Tape tape;
    tape.backward(sum(mul(tape.param(px), tape.param(pw))));
    CHECK(px.grad == pw.value);
    CHECK(pw.grad == px.value);
  }
  SUBCASE("non-scalar loss is a contract error") {
    Tape tape;
    CHECK_THROWS_AS(tape.backward(tape.param(px)), ContractError);
  }
  SUBCASE("a consumed tape cannot be reused") {
    Tape tape;
    Var s = sum(tape.param(px));
    tape.backward(s);
    CHECK_THROWS_AS(tape.constant(Tensor::scalar(1)), ContractError);
  }
  SUBCASE("a node without a path to the loss receives nothing") {
    Tape tape;
    Parameter unused("u", Tensor::from_rows({{1, 2}}));
    Var u = relu(tape.param(unused));
    (void)u;
    tape.backward(sum(tape.param(px)));
    CHECK(unused.grad == Tensor::zeros({1, 2}));
  }
}

TEST_CASE("backprop: 3-layer MLP matches finite differences") {
  oracle::Gen g(17);
  const std::size_t n = 4, d0 = 5, d1 = 7, d2 = 6, d3 = 3;
  const Tensor x = random_tensor(g, {n, d0});
  const std::vector<int> labels{0, 2, 1, 2};
  std::vector<Parameter> ps;
  ps.emplace_back("w1", random_tensor(g, {d1, d0}));
  ps.emplace_back("b1", random_tensor(g, {d1}, -0.1, 0.1));
  ps.emplace_back("w2", random_tensor(g, {d2, d1}));
  ps.emplace_back("b2", random_tensor(g, {d2}, -0.1, 0.1));
  ps.emplace_back("w3", random_tensor(g, {d3, d2}));
  ps.emplace_back("b3", random_tensor(g, {d3}, -0.1, 0.1));

  Tape tape;
  Var h = relu(linear(tape.constant(x), tape.param(ps[0]), tape.param(ps[1]), nullptr, 0));
  h = relu(linear(h, tape.param(ps[2]), tape.param(ps[3]), nullptr, 1));
  tape.backward(cross_entropy(linear(h, tape.param(ps[4]), tape.param(ps[5]), nullptr, 2), labels));

  // Double-precision forward of the same network.
  auto forward = [&](const std::vector<std::vector<double>>& p) {
    std::vector<double> a(x.storage().begin(), x.storage().end());
    std::size_t width = d0;
    const std::size_t outs[] = {d1, d2, d3};
    for (int l = 0; l < 3; ++l) {
      const auto& w = p[2 * l];
      const auto& b = p[2 * l + 1];
      std::vector<double> z(n * outs[l]);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < outs[l]; ++o) {
          double s = b[o];
          for (std::size_t k = 0; k < width; ++k) s += a[i * width + k] * w[o * width + k];
          z[i * outs[l] + o] = (l < 2 && s < 0) ? 0.0 : s;
        }
      a = std::move(z);
      width = outs[l];
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double mx = a[i * d3];
      for (std::size_t c = 1; c < d3; ++c) mx = std::max(mx, a[i * d3 + c]);
      double se = 0.0;
      for (std::size_t c = 0; c < d3; ++c) se += std::exp(a[i * d3 + c] - mx);
      loss += std::log(se) + mx - a[i * d3 + labels[i]];
    }
    return loss / n;
  };
  std::vector<std::vector<double>> base;
  for (const auto& p : ps) base.push_back(to_double(p.value));
  for (std::size_t k = 0; k < ps.size(); ++k) {
    INFO("parameter " << ps[k].name);
    const auto num = numeric_grad(
        [&](const std::vector<double>& v) {
          auto p = base;
          p[k] = v;
          return forward(p);
        },
        base[k]);
    check_rel(ps[k].grad, num);
  }
}

TEST_CASE("elementwise suite") {
  SUBCASE("relu forward and backward") {
    Parameter p("x", Tensor::from_rows({{-1, 2}}));
    Tape tape;
    Var y = relu(tape.param(p));
    CHECK(y.value() == Tensor::from_rows({{0, 2}}));
    tape.backward(sum(y));
    CHECK(p.grad == Tensor::from_rows({{0, 1}}));
  }
  SUBCASE("cross entropy of uniform logits is ln C") {
    for (std::size_t c : {2, 5, 10}) {
      Tape tape;
      Var loss = cross_entropy(tape.constant(Tensor({1, c}, 0.3f)), std::vector<int>{1});
      CHECK(loss.value()[0] == doctest::Approx(std::log(static_cast<double>(c))).epsilon(1e-6));
    }
  }
  SUBCASE("normalize then invert with saved statistics recovers the input") {
    oracle::Gen g(18);
    const Tensor x = random_tensor(g, {3, 4, 5, 5}, -2.0, 3.0);
    const ChannelStats st = channel_stats(x, 1e-5f);
    const std::vector<float> gamma = g.floats(4, 0.5, 2.0), beta = g.floats(4, -1.0, 1.0);
    const Tensor back = denormalize_with(normalize_with(x, st, gamma, beta), st, gamma, beta);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::fabs(back[i] - x[i]) <= 1e-5);
  }
  SUBCASE("broadcast failure is a shape error") {
    Tape tape;
    CHECK_THROWS_AS(add(tape.constant(Tensor({2, 3})), tape.constant(Tensor({4}))), DimensionError);
  }
}

TEST_CASE("batch_norm and max_pool gradients match finite differences") {
  oracle::Gen g(19);
  const std::size_t n = 3, c = 2, hw = 4;
  Parameter px("x", random_tensor(g, {n, c, hw, hw}, -1.0, 2.0));
  Parameter pg("gamma", Tensor(Shape{c}, g.floats(c, 0.5, 1.5)));
  Parameter pb("beta", Tensor(Shape{c}, g.floats(c, -0.5, 0.5)));
  const Tensor weights = random_tensor(g, {n, c, hw / 2, hw / 2});
  RunningStats running;
  Tape tape;
  Var y = max_pool2d(batch_norm(tape.param(px), tape.param(pg), tape.param(pb), running, true), 2);
  tape.backward(sum(mul(y, tape.constant(weights))));

  const double eps = running.eps;
  auto loss = [&](const std::vector<double>& x, const std::vector<double>& gm, const std::vector<double>& bt) {
    std::vector<double> z(x.size());
    const std::size_t per = hw * hw;
    for (std::size_t ch = 0; ch < c; ++ch) {
      double mean = 0.0, var = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < per; ++i) mean += x[(b * c + ch) * per + i];
      mean /= n * per;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < per; ++i) var += std::pow(x[(b * c + ch) * per + i] - mean, 2);
      var /= n * per;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < per; ++i) {
          const std::size_t k = (b * c + ch) * per + i;
          z[k] = gm[ch] * (x[k] - mean) / std::sqrt(var + eps) + bt[ch];
        }
    }
    double s = 0.0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t oy = 0; oy < hw / 2; ++oy)
          for (std::size_t ox = 0; ox < hw / 2; ++ox) {
            double m = -1e300;
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dx = 0; dx < 2; ++dx)
                m = std::max(m, z[((b * c + ch) * hw + 2 * oy + dy) * hw + 2 * ox + dx]);
            s += m * weights[((b * c + ch) * (hw / 2) + oy) * (hw / 2) + ox];
          }
    return s;
  };
  const auto x0 = to_double(px.value), g0 = to_double(pg.value), b0 = to_double(pb.value);
  check_rel(px.grad, numeric_grad([&](const std::vector<double>& v) { return loss(v, g0, b0); }, x0));
  check_rel(pg.grad, numeric_grad([&](const std::vector<double>& v) { return loss(x0, v, b0); }, g0));
  check_rel(pb.grad, numeric_grad([&](const std::vector<double>& v) { return loss(x0, g0, v); }, b0));
}

TEST_CASE("determinism: identical inputs give bit-identical outputs and gradients") {
  auto run = [] {
    oracle::Gen g(20);
    Parameter w("w", random_tensor(g, {4, 3, 3, 3}));
    const Tensor x = random_tensor(g, {2, 3, 6, 6});
    Tape tape;
    Var y = conv2d(tape.constant(x), tape.param(w), std::nullopt, 1, 1, nullptr, 0);
    Tensor out = y.value();
    tape.backward(sum(relu(y)));
    return std::make_pair(out, w.grad);
  };
  const auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}
