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

#include "efqat/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "efqat/error.hpp"

namespace efqat {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kParameter: return "parameter";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kRelu: return "relu";
    case OpKind::kSum: return "sum";
    case OpKind::kLinear: return "linear";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kMaxPool: return "max_pool2d";
    case OpKind::kFlatten: return "flatten";
    case OpKind::kBatchNorm: return "batch_norm";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kFakeQuantAsym: return "fake_quant_asym";
    case OpKind::kFakeQuantSym: return "fake_quant_sym";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

const Tape::Node& Tape::node(int id) const {
  if (consumed_) throw ContractError("tape already consumed by backward()");
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) throw ContractError("variable is not on this tape");
  return nodes_[id];
}

Tape::Node& Tape::node(int id) { return const_cast<Node&>(std::as_const(*this).node(id)); }

Var Tape::constant(Tensor value) {
  if (consumed_) throw ContractError("tape already consumed by backward()");
  Node n;
  n.kind = OpKind::kConstant;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p) {
  if (consumed_) throw ContractError("tape already consumed by backward()");
  if (p.grad.shape() != p.value.shape()) p.grad = Tensor::zeros_like(p.value);
  Node n;
  n.kind = OpKind::kParameter;
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(OpKind kind, std::vector<int> inputs, Tensor value, BackwardFn backward, bool trainable_context) {
  if (consumed_) throw ContractError("tape already consumed by backward()");
  Node n;
  n.kind = kind;
  n.requires_grad = trainable_context;
  for (int in : inputs) n.requires_grad = n.requires_grad || node(in).requires_grad;
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Tensor& Tape::value(int id) const {
  const Node& n = node(id);
  return n.param ? n.param->value : n.value;
}

bool Tape::requires_grad(int id) const { return node(id).requires_grad; }
OpKind Tape::kind(int id) const { return node(id).kind; }
const std::vector<int>& Tape::inputs(int id) const { return node(id).inputs; }

const Tensor& Tape::grad(int id) const {
  const Node& n = node(id);
  if (n.param) return n.param->grad;
  if (!n.has_grad) throw ContractError("node has no gradient");
  return n.grad;
}

Tensor& Tape::grad_accumulator(int id) {
  Node& n = node(id);
  if (n.param) return n.param->grad;
  if (!n.has_grad) {
    n.grad = Tensor::zeros_like(n.value);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ContractError("loss variable belongs to a different tape");
  if (value(loss.id()).numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(value(loss.id()).shape()));
  }
  if (node(loss.id()).requires_grad) grad_accumulator(loss.id()).fill(1.0f);
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward) continue;
    if (!n.has_grad) continue;  // no path from the loss
    n.backward(*this, id);
  }
  nodes_.clear();
  nodes_.shrink_to_fit();
  consumed_ = true;
}

// ---------------------------------------------------------------------------

namespace {

void add_into(Tensor& dst, const Tensor& src) {
  float* d = dst.data();
  const float* s = src.data();
  for (std::size_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
}

bool is_suffix(const Shape& full, const Shape& suffix) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.begin(), suffix.end(), full.end() - static_cast<long>(suffix.size()));
}

void same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
}

}  // namespace

Var matmul(Var a, Var b) {
  same_tape(a, b);
  Tape& t = a.tape();
  Tensor out = efqat::matmul(a.value(), b.value());
  const int ia = a.id(), ib = b.id();
  return t.record(OpKind::kMatmul, {ia, ib}, std::move(out), [ia, ib](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    if (tp.requires_grad(ia)) add_into(tp.grad_accumulator(ia), efqat::matmul(g, transpose2d(tp.value(ib))));
    if (tp.requires_grad(ib)) add_into(tp.grad_accumulator(ib), efqat::matmul(transpose2d(tp.value(ia)), g));
  });
}

Var add(Var a, Var b) {
  same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!is_suffix(av.shape(), bv.shape())) {
    throw DimensionError("cannot broadcast " + shape_str(bv.shape()) + " onto " + shape_str(av.shape()));
  }
  Tensor out = av;
  const std::size_t nb = bv.numel();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i % nb];
  const int ia = a.id(), ib = b.id();
  return a.tape().record(OpKind::kAdd, {ia, ib}, std::move(out), [ia, ib, nb](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    if (tp.requires_grad(ia)) add_into(tp.grad_accumulator(ia), g);
    if (tp.requires_grad(ib)) {
      Tensor& gb = tp.grad_accumulator(ib);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i % nb] += g[i];
    }
  });
}

Var mul(Var a, Var b) {
  same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!is_suffix(av.shape(), bv.shape())) {
    throw DimensionError("cannot broadcast " + shape_str(bv.shape()) + " onto " + shape_str(av.shape()));
  }
  Tensor out = av;
  const std::size_t nb = bv.numel();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i % nb];
  const int ia = a.id(), ib = b.id();
  return a.tape().record(OpKind::kMul, {ia, ib}, std::move(out), [ia, ib, nb](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    const Tensor& av = tp.value(ia);
    const Tensor& bv = tp.value(ib);
    if (tp.requires_grad(ia)) {
      Tensor& ga = tp.grad_accumulator(ia);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i % nb];
    }
    if (tp.requires_grad(ib)) {
      Tensor& gb = tp.grad_accumulator(ib);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i % nb] += g[i] * av[i];
    }
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (float& v : out.storage()) v = v > 0.0f ? v : 0.0f;
  const int ix = x.id();
  return x.tape().record(OpKind::kRelu, {ix}, std::move(out), [ix](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.value(ix);
    Tensor& gx = tp.grad_accumulator(ix);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += xv[i] > 0.0f ? g[i] : 0.0f;
  });
}

Var sum(Var x) {
  float s = 0.0f;
  for (float v : x.value().storage()) s += v;
  const int ix = x.id();
  return x.tape().record(OpKind::kSum, {ix}, Tensor::scalar(s), [ix](Tape& tp, int self) {
    const float g = tp.grad(self)[0];
    for (float& v : tp.grad_accumulator(ix).storage()) v += g;
  });
}

Var flatten(Var x) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw DimensionError("flatten needs a batch axis, got " + shape_str(s));
  const std::size_t n = s[0];
  Tensor out = x.value().reshaped({n, x.value().numel() / n});
  const int ix = x.id();
  return x.tape().record(OpKind::kFlatten, {ix}, std::move(out), [ix](Tape& tp, int self) {
    add_into(tp.grad_accumulator(ix), tp.grad(self));
  });
}

Var max_pool2d(Var x, std::size_t k) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw DimensionError("max_pool2d expects [N×C×H×W], got " + shape_str(s));
  if (k == 0 || s[2] < k || s[3] < k) throw DimensionError("pool window " + std::to_string(k) + " exceeds " + shape_str(s));
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3], ho = h / k, wo = w / k;
  Tensor out({n, c, ho, wo});
  std::vector<std::uint32_t> argmax(out.numel());
  const Tensor& xv = x.value();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const float* src = xv.data() + plane * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (oy * k) * w + ox * k;
        for (std::size_t dy = 0; dy < k; ++dy) {
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t idx = (oy * k + dy) * w + ox * k + dx;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t o = (plane * ho + oy) * wo + ox;
        out[o] = src[best];
        argmax[o] = static_cast<std::uint32_t>(plane * h * w + best);
      }
    }
  }
  const int ix = x.id();
  return x.tape().record(OpKind::kMaxPool, {ix}, std::move(out), [ix, argmax = std::move(argmax)](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad_accumulator(ix);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[argmax[i]] += g[i];
  });
}

Var linear(Var x, Var w, std::optional<Var> bias, const RowMask* mask, int layer) {
  same_tape(x, w);
  Tape& t = x.tape();
  MacTally& tally = t.macs(layer);
  Tensor out = linear_forward(x.value(), w.value(), bias ? &bias->value() : nullptr, &tally);
  std::vector<int> inputs{x.id(), w.id()};
  if (bias) inputs.push_back(bias->id());
  const int ix = x.id(), iw = w.id(), ib = bias ? bias->id() : -1;
  return t.record(OpKind::kLinear, std::move(inputs), std::move(out), [ix, iw, ib, mask, layer](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    GradPair grads = linear_backward(g, tp.value(ix), tp.value(iw), mask, &tp.macs(layer));
    if (tp.requires_grad(ix)) add_into(tp.grad_accumulator(ix), grads.dx);
    if (tp.requires_grad(iw)) add_into(tp.grad_accumulator(iw), grads.dw);
    if (ib >= 0 && tp.requires_grad(ib)) {
      Tensor& gb = tp.grad_accumulator(ib);
      const std::size_t c = gb.numel();
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i % c] += g[i];
    }
  });
}

Var conv2d(Var x, Var w, std::optional<Var> bias, std::size_t stride, std::size_t padding, const RowMask* mask,
           int layer) {
  same_tape(x, w);
  Tape& t = x.tape();
  MacTally& tally = t.macs(layer);
  Tensor out = conv2d_forward(x.value(), w.value(), bias ? &bias->value() : nullptr, stride, padding, &tally);
  std::vector<int> inputs{x.id(), w.id()};
  if (bias) inputs.push_back(bias->id());
  const int ix = x.id(), iw = w.id(), ib = bias ? bias->id() : -1;
  return t.record(OpKind::kConv2d, std::move(inputs), std::move(out),
                  [ix, iw, ib, stride, padding, mask, layer](Tape& tp, int self) {
                    const Tensor& g = tp.grad(self);
                    GradPair grads =
                        conv2d_backward(g, tp.value(ix), tp.value(iw), stride, padding, mask, &tp.macs(layer));
                    if (tp.requires_grad(ix)) add_into(tp.grad_accumulator(ix), grads.dx);
                    if (tp.requires_grad(iw)) add_into(tp.grad_accumulator(iw), grads.dw);
                    if (ib >= 0 && tp.requires_grad(ib)) {
                      Tensor& gb = tp.grad_accumulator(ib);
                      const std::size_t c = g.dim(1), hw = g.dim(2) * g.dim(3);
                      for (std::size_t n = 0; n < g.dim(0); ++n)
                        for (std::size_t o = 0; o < c; ++o)
                          for (std::size_t s = 0; s < hw; ++s) gb[o] += g[(n * c + o) * hw + s];
                    }
                  });
}

// ---------------------------------------------------------------------------
// Normalisation

namespace {

struct ChannelLayout {
  std::size_t outer, channels, inner;
};

ChannelLayout channel_layout(const Shape& s) {
  if (s.size() != 2 && s.size() != 4) throw DimensionError("normalisation expects rank 2 or 4, got " + shape_str(s));
  return {s[0], s[1], s.size() == 4 ? s[2] * s[3] : 1};
}

void check_affine(const ChannelLayout& l, std::span<const float> gamma, std::span<const float> beta) {
  if (gamma.size() != l.channels || beta.size() != l.channels) {
    throw DimensionError("normalisation scale/shift length " + std::to_string(gamma.size()) + "/" +
                         std::to_string(beta.size()) + " vs " + std::to_string(l.channels) + " channels");
  }
}

}  // namespace

ChannelStats channel_stats(const Tensor& x, float eps) {
  const ChannelLayout l = channel_layout(x.shape());
  ChannelStats s{std::vector<float>(l.channels, 0.0f), std::vector<float>(l.channels, 0.0f),
                 std::vector<float>(l.channels, 0.0f)};
  const float count = static_cast<float>(l.outer * l.inner);
  for (std::size_t c = 0; c < l.channels; ++c) {
    float acc = 0.0f;
    for (std::size_t n = 0; n < l.outer; ++n) {
      const float* p = x.data() + (n * l.channels + c) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) acc += p[i];
    }
    const float mean = acc / count;
    float sq = 0.0f;
    for (std::size_t n = 0; n < l.outer; ++n) {
      const float* p = x.data() + (n * l.channels + c) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) sq += (p[i] - mean) * (p[i] - mean);
    }
    s.mean[c] = mean;
    s.var[c] = sq / count;
    s.invstd[c] = 1.0f / std::sqrt(s.var[c] + eps);
  }
  return s;
}

Tensor normalize_with(const Tensor& x, const ChannelStats& s, std::span<const float> gamma,
                      std::span<const float> beta) {
  const ChannelLayout l = channel_layout(x.shape());
  check_affine(l, gamma, beta);
  Tensor y(x.shape());
  for (std::size_t n = 0; n < l.outer; ++n)
    for (std::size_t c = 0; c < l.channels; ++c) {
      const std::size_t base = (n * l.channels + c) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i)
        y[base + i] = gamma[c] * ((x[base + i] - s.mean[c]) * s.invstd[c]) + beta[c];
    }
  return y;
}

Tensor denormalize_with(const Tensor& y, const ChannelStats& s, std::span<const float> gamma,
                        std::span<const float> beta) {
  const ChannelLayout l = channel_layout(y.shape());
  check_affine(l, gamma, beta);
  Tensor x(y.shape());
  for (std::size_t n = 0; n < l.outer; ++n)
    for (std::size_t c = 0; c < l.channels; ++c) {
      const std::size_t base = (n * l.channels + c) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i)
        x[base + i] = (y[base + i] - beta[c]) / gamma[c] / s.invstd[c] + s.mean[c];
    }
  return x;
}

Var batch_norm(Var x, Var gamma, Var beta, RunningStats& running, bool training) {
  same_tape(x, gamma);
  same_tape(x, beta);
  const ChannelLayout l = channel_layout(x.shape());
  check_affine(l, gamma.value().span(), beta.value().span());
  if (running.mean.size() != l.channels) {
    running.mean.assign(l.channels, 0.0f);
    running.var.assign(l.channels, 1.0f);
  }

  ChannelStats stats;
  if (training) {
    stats = channel_stats(x.value(), running.eps);
    const float count = static_cast<float>(l.outer * l.inner);
    const float unbias = count > 1.0f ? count / (count - 1.0f) : 1.0f;
    for (std::size_t c = 0; c < l.channels; ++c) {
      running.mean[c] = (1.0f - running.momentum) * running.mean[c] + running.momentum * stats.mean[c];
      running.var[c] = (1.0f - running.momentum) * running.var[c] + running.momentum * stats.var[c] * unbias;
    }
  } else {
    stats.mean = running.mean;
    stats.var = running.var;
    stats.invstd.resize(l.channels);
    for (std::size_t c = 0; c < l.channels; ++c) stats.invstd[c] = 1.0f / std::sqrt(running.var[c] + running.eps);
  }
  Tensor out = normalize_with(x.value(), stats, gamma.value().span(), beta.value().span());

  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(
      OpKind::kBatchNorm, {ix, ig, ib}, std::move(out),
      [ix, ig, ib, l, training, stats = std::move(stats)](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv = tp.value(ix);
        const Tensor& gv = tp.value(ig);
        const float count = static_cast<float>(l.outer * l.inner);
        std::vector<float> dgamma(l.channels, 0.0f), dbeta(l.channels, 0.0f);
        for (std::size_t c = 0; c < l.channels; ++c) {
          for (std::size_t n = 0; n < l.outer; ++n) {
            const std::size_t base = (n * l.channels + c) * l.inner;
            for (std::size_t i = 0; i < l.inner; ++i) {
              const float xhat = (xv[base + i] - stats.mean[c]) * stats.invstd[c];
              dgamma[c] += g[base + i] * xhat;
              dbeta[c] += g[base + i];
            }
          }
        }
        if (tp.requires_grad(ix)) {
          Tensor& gx = tp.grad_accumulator(ix);
          for (std::size_t c = 0; c < l.channels; ++c) {
            const float k = gv[c] * stats.invstd[c];
            const float mean_dy = dbeta[c] / count;
            const float mean_dy_xhat = dgamma[c] / count;
            for (std::size_t n = 0; n < l.outer; ++n) {
              const std::size_t base = (n * l.channels + c) * l.inner;
              for (std::size_t i = 0; i < l.inner; ++i) {
                if (training) {
                  const float xhat = (xv[base + i] - stats.mean[c]) * stats.invstd[c];
                  gx[base + i] += k * (g[base + i] - mean_dy - xhat * mean_dy_xhat);
                } else {
                  gx[base + i] += k * g[base + i];
                }
              }
            }
          }
        }
        if (tp.requires_grad(ig)) {
          Tensor& gg = tp.grad_accumulator(ig);
          for (std::size_t c = 0; c < l.channels; ++c) gg[c] += dgamma[c];
        }
        if (tp.requires_grad(ib)) {
          Tensor& gb = tp.grad_accumulator(ib);
          for (std::size_t c = 0; c < l.channels; ++c) gb[c] += dbeta[c];
        }
      });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2) throw DimensionError("cross_entropy expects [N×C] logits, got " + shape_str(z.shape()));
  const std::size_t n = z.dim(0), c = z.dim(1);
  if (labels.size() != n) {
    throw DimensionError("cross_entropy got " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                         " rows");
  }
  Tensor probs({n, c});
  float loss = 0.0f;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw ContractError("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    }
    const float* row = z.data() + i * c;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, row[j]);
    float denom = 0.0f;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(row[j] - mx);
      denom += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= denom;
    loss += std::log(denom) + mx - row[y];
  }
  loss /= static_cast<float>(n);
  const int iz = logits.id();
  std::vector<int> y(labels.begin(), labels.end());
  return logits.tape().record(OpKind::kCrossEntropy, {iz}, Tensor::scalar(loss),
                              [iz, n, c, y = std::move(y), probs = std::move(probs)](Tape& tp, int self) {
                                const float g = tp.grad(self)[0] / static_cast<float>(n);
                                Tensor& gz = tp.grad_accumulator(iz);
                                for (std::size_t i = 0; i < n; ++i) {
                                  for (std::size_t j = 0; j < c; ++j) {
                                    const float target = static_cast<std::size_t>(y[i]) == j ? 1.0f : 0.0f;
                                    gz[i * c + j] += g * (probs[i * c + j] - target);
                                  }
                                }
                              });
}

}  // namespace efqat
