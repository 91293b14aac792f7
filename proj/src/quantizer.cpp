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

#include "efqat/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "efqat/error.hpp"

namespace efqat {

const char* to_string(ScaleTransform t) { return t == ScaleTransform::kLog2 ? "log2" : "raw"; }

ScaleTransform parse_scale_transform(const std::string& s) {
  if (s == "raw") return ScaleTransform::kRaw;
  if (s == "log2") return ScaleTransform::kLog2;
  throw ConfigError("unknown qparam transform '" + s + "' (expected raw or log2)");
}

namespace {

void check_bits(int bits) {
  if (bits < 2 || bits > 16) throw ConfigError("bit-width must be in [2, 16], got " + std::to_string(bits));
}

// Channel index of flat element i for a slice layout.
struct SliceIndex {
  std::size_t inner = 1, count = 1;
  std::size_t operator()(std::size_t i) const noexcept { return (i / inner) % count; }
};

SliceIndex slice_index(const Shape& shape, Granularity g, std::size_t axis, std::size_t slices) {
  if (g == Granularity::kPerTensor) {
    if (slices != 1) throw ConfigError("per-tensor quantization expects one scale, got " + std::to_string(slices));
    return {1, 1};
  }
  if (axis >= shape.size()) {
    throw ConfigError("per-channel axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  if (shape[axis] != slices) {
    throw ConfigError("per-channel scale length " + std::to_string(slices) + " does not match " +
                      std::to_string(shape[axis]) + " channels of " + shape_str(shape));
  }
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
  return {inner, slices};
}

}  // namespace

QuantParams QuantParams::asymmetric_per_tensor(float scale, float zero_point, int bits) {
  QuantParams qp;
  qp.bits = bits;
  qp.symmetric = false;
  qp.granularity = Granularity::kPerTensor;
  qp.scale = {scale};
  qp.zero_point = {zero_point};
  qp.validate();
  return qp;
}

QuantParams QuantParams::symmetric_per_channel(std::vector<float> scales, int bits, std::size_t axis) {
  QuantParams qp;
  qp.bits = bits;
  qp.symmetric = true;
  qp.granularity = Granularity::kPerChannel;
  qp.axis = axis;
  qp.zero_point.assign(scales.size(), 0.0f);
  qp.scale = std::move(scales);
  qp.validate();
  return qp;
}

std::int64_t QuantParams::qmin() const { return symmetric ? -((std::int64_t{1} << (bits - 1)) - 1) : 0; }

std::int64_t QuantParams::qmax() const {
  return symmetric ? (std::int64_t{1} << (bits - 1)) - 1 : (std::int64_t{1} << bits) - 1;
}

void QuantParams::set_transform(ScaleTransform t) {
  transform = t;
  if (t == ScaleTransform::kLog2) {
    log2_scale.resize(scale.size());
    for (std::size_t i = 0; i < scale.size(); ++i) log2_scale[i] = std::log2(scale[i]);
  } else {
    log2_scale.clear();
  }
}

std::size_t QuantParams::sync_scale() {
  std::size_t clamped = 0;
  if (transform == ScaleTransform::kLog2) {
    for (std::size_t i = 0; i < scale.size(); ++i) scale[i] = std::exp2(log2_scale[i]);
  } else {
    for (float& s : scale) {
      if (!(s >= kMinScale)) {
        s = kMinScale;
        ++clamped;
      }
    }
  }
  if (!symmetric) {
    const float hi = static_cast<float>(qmax());
    for (float& z : zero_point) z = std::clamp(z, 0.0f, hi);
  }
  return clamped;
}

void QuantParams::validate() const {
  check_bits(bits);
  if (scale.empty()) throw ConfigError("quantization parameters have no scales");
  if (zero_point.size() != scale.size()) throw ConfigError("zero-point count differs from scale count");
  if (granularity == Granularity::kPerTensor && scale.size() != 1) {
    throw ConfigError("per-tensor quantization needs exactly one scale");
  }
  for (float s : scale) {
    if (!(s > 0.0f) || !std::isfinite(s)) throw ConfigError("quantization scale must be positive and finite");
  }
  for (float z : zero_point) {
    if (symmetric && z != 0.0f) throw ConfigError("symmetric quantization requires zero points of 0");
    if (!symmetric && (z < 0.0f || z > static_cast<float>(qmax()))) {
      throw ConfigError("asymmetric zero point " + std::to_string(z) + " outside [0, " + std::to_string(qmax()) + "]");
    }
  }
  if (transform == ScaleTransform::kLog2 && log2_scale.size() != scale.size()) {
    throw ConfigError("log2 scale vector out of sync");
  }
}

void RangeObserver::observe(const Tensor& t) {
  if (t.empty()) throw ContractError("cannot observe an empty tensor");
  std::size_t slices = 1;
  if (granularity_ == Granularity::kPerChannel) {
    if (axis_ >= t.rank()) throw ContractError("observer axis " + std::to_string(axis_) + " invalid for " + shape_str(t.shape()));
    slices = t.dim(axis_);
  }
  if (min_.empty()) {
    min_.assign(slices, std::numeric_limits<float>::infinity());
    max_.assign(slices, -std::numeric_limits<float>::infinity());
  } else if (min_.size() != slices) {
    throw ContractError("observer saw " + std::to_string(slices) + " channels after " + std::to_string(min_.size()));
  }
  const SliceIndex idx = slice_index(t.shape(), granularity_, axis_, slices);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const std::size_t c = idx(i);
    min_[c] = std::min(min_[c], t[i]);
    max_[c] = std::max(max_[c], t[i]);
  }
}

AsymParams asym_params(double alpha, double beta, int bits) {
  check_bits(bits);
  if (beta == alpha) throw DegenerateRangeError("asymmetric range is empty (alpha == beta == " + std::to_string(alpha) + ")");
  if (beta < alpha) throw ContractError("asymmetric range has beta < alpha");
  const double levels = std::ldexp(1.0, bits) - 1.0;
  const double s = (beta - alpha) / levels;
  // alpha/S evaluated as alpha·levels/(beta - alpha) so exact ties stay exact.
  const double z = -std::round(alpha * levels / (beta - alpha));
  return {static_cast<float>(s), static_cast<float>(std::clamp(z, 0.0, levels))};
}

float sym_scale(double alpha, double beta, int bits) {
  check_bits(bits);
  const double m = std::max(std::abs(alpha), std::abs(beta));
  if (m == 0.0) throw DegenerateRangeError("symmetric range is all zero");
  return static_cast<float>(m / (std::ldexp(1.0, bits - 1) - 1.0));
}

QuantParams params_from_observer(const RangeObserver& obs, int bits, bool symmetric) {
  if (!obs.seen()) throw ContractError("observer has not seen any data");
  QuantParams qp;
  qp.bits = bits;
  qp.symmetric = symmetric;
  qp.granularity = obs.granularity();
  qp.axis = obs.axis();
  const std::size_t n = obs.min().size();
  qp.scale.resize(n);
  qp.zero_point.assign(n, 0.0f);
  for (std::size_t c = 0; c < n; ++c) {
    const double lo = obs.min()[c], hi = obs.max()[c];
    if (symmetric) {
      qp.scale[c] = (lo == 0.0 && hi == 0.0) ? 1.0f : sym_scale(lo, hi, bits);
    } else if (lo == hi) {
      qp.scale[c] = 1.0f;
      qp.zero_point[c] = static_cast<float>(std::clamp(-std::round(lo), 0.0, static_cast<double>(qp.qmax())));
    } else {
      const AsymParams p = asym_params(lo, hi, bits);
      qp.scale[c] = p.scale;
      qp.zero_point[c] = p.zero_point;
    }
  }
  qp.validate();
  return qp;
}

FakeQuantResult fake_quant(const Tensor& x, const QuantParams& qp) {
  const SliceIndex idx = slice_index(x.shape(), qp.granularity, qp.axis, qp.slices());
  const float lo = static_cast<float>(qp.qmin()), hi = static_cast<float>(qp.qmax());
  FakeQuantResult r{Tensor(x.shape()), std::vector<Region>(x.numel(), Region::kInRange)};
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t c = idx(i);
    const float s = qp.scale[c], z = qp.zero_point[c];
    float q = std::round(x[i] / s) + z;
    if (q < lo) {
      q = lo;
      r.region[i] = Region::kLow;
    } else if (q > hi) {
      q = hi;
      r.region[i] = Region::kHigh;
    }
    r.out[i] = s * (q - z);
  }
  return r;
}

Tensor fake_quant_asym(const Tensor& x, const QuantParams& qp) {
  if (qp.symmetric) throw ConfigError("fake_quant_asym called with symmetric parameters");
  return fake_quant(x, qp).out;
}

Tensor fake_quant_sym(const Tensor& w, const QuantParams& qp) {
  if (!qp.symmetric) throw ConfigError("fake_quant_sym called with asymmetric parameters");
  return fake_quant(w, qp).out;
}

std::vector<std::int32_t> quantize_codes(const Tensor& x, const QuantParams& qp) {
  const SliceIndex idx = slice_index(x.shape(), qp.granularity, qp.axis, qp.slices());
  const float lo = static_cast<float>(qp.qmin()), hi = static_cast<float>(qp.qmax());
  std::vector<std::int32_t> codes(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t c = idx(i);
    const float q = std::clamp(std::round(x[i] / qp.scale[c]) + std::round(qp.zero_point[c]), lo, hi);
    codes[i] = static_cast<std::int32_t>(q);
  }
  return codes;
}

Tensor ste_backward(const Tensor& dout, std::span<const Region> region) {
  if (region.size() != dout.numel()) throw DimensionError("STE mask length differs from gradient size");
  Tensor din(dout.shape());
  for (std::size_t i = 0; i < dout.numel(); ++i) din[i] = region[i] == Region::kInRange ? dout[i] : 0.0f;
  return din;
}

QuantGrads qparam_grads(const Tensor& dout, const Tensor& x, const QuantParams& qp, std::span<const Region> region) {
  if (dout.shape() != x.shape() || region.size() != x.numel()) {
    throw DimensionError("qparam gradient inputs disagree: dOut " + shape_str(dout.shape()) + ", x " + shape_str(x.shape()));
  }
  const SliceIndex idx = slice_index(x.shape(), qp.granularity, qp.axis, qp.slices());
  const std::size_t n = qp.slices();
  std::vector<double> ds(n, 0.0), dz(n, 0.0);
  const double lo = static_cast<double>(qp.qmin()), hi = static_cast<double>(qp.qmax());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float g = dout[i];
    if (g == 0.0f) continue;
    const std::size_t c = idx(i);
    const double s = qp.scale[c], z = qp.zero_point[c];
    switch (region[i]) {
      case Region::kInRange: {
        const double rounded = std::round(x[i] / qp.scale[c]);  // same rounding as the forward pass
        ds[c] += g * (rounded - static_cast<double>(x[i]) / s);
        break;
      }
      case Region::kLow:
        ds[c] += g * (lo - z);
        dz[c] -= g * s;
        break;
      case Region::kHigh:
        ds[c] += g * (hi - z);
        dz[c] -= g * s;
        break;
    }
  }
  QuantGrads out;
  out.reset(n);
  for (std::size_t c = 0; c < n; ++c) {
    double gs = ds[c];
    if (qp.transform == ScaleTransform::kLog2) gs *= static_cast<double>(qp.scale[c]) * std::numbers::ln2;
    out.scale[c] = static_cast<float>(gs);
    out.zero_point[c] = qp.symmetric ? 0.0f : static_cast<float>(dz[c]);
  }
  return out;
}

Var fake_quant(Var x, const QuantParams& qp, QuantGrads* grads) {
  FakeQuantResult r = fake_quant(x.value(), qp);
  const int ix = x.id();
  const QuantParams* params = &qp;
  return x.tape().record(
      qp.symmetric ? OpKind::kFakeQuantSym : OpKind::kFakeQuantAsym, {ix}, std::move(r.out),
      [ix, params, grads, region = std::move(r.region)](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        if (tp.requires_grad(ix)) {
          Tensor& gx = tp.grad_accumulator(ix);
          for (std::size_t i = 0; i < g.numel(); ++i) {
            if (region[i] == Region::kInRange) gx[i] += g[i];
          }
        }
        if (grads) {
          const QuantGrads q = qparam_grads(g, tp.value(ix), *params, region);
          if (grads->scale.size() != q.scale.size()) grads->reset(q.scale.size());
          for (std::size_t c = 0; c < q.scale.size(); ++c) {
            grads->scale[c] += q.scale[c];
            grads->zero_point[c] += q.zero_point[c];
          }
        }
      },
      grads != nullptr);
}

}  // namespace efqat
