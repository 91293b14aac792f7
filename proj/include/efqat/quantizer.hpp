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

// Uniform integer fake quantization.
//
//   asymmetric (activations):  q = clamp(round(x/S) + Z, 0, 2^b - 1),         x~ = S (q - Z)
//   symmetric  (weights):      q = clamp(round(w/S), -(2^(b-1) - 1), 2^(b-1) - 1), w~ = S q
//
// round() is round-half-away-from-zero everywhere. Scales and zero points are
// learnable; the zero point is carried as a real-valued latent so its gradient
// is well defined, and it is integral right after calibration.

#ifndef EFQAT_QUANTIZER_HPP_
#define EFQAT_QUANTIZER_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "efqat/autograd.hpp"
#include "efqat/tensor.hpp"

namespace efqat {

enum class Granularity { kPerTensor, kPerChannel };
enum class ScaleTransform { kRaw, kLog2 };

const char* to_string(ScaleTransform t);
ScaleTransform parse_scale_transform(const std::string& s);

/// Lower bound applied to raw scales after each optimizer step.
inline constexpr float kMinScale = 1e-8f;

struct QuantParams {
  int bits = 8;
  bool symmetric = false;
  Granularity granularity = Granularity::kPerTensor;
  std::size_t axis = 0;
  std::vector<float> scale;
  std::vector<float> zero_point;
  ScaleTransform transform = ScaleTransform::kRaw;
  /// log2(scale), kept in sync when transform == kLog2; the optimizer steps this.
  std::vector<float> log2_scale;

  static QuantParams asymmetric_per_tensor(float scale, float zero_point, int bits);
  static QuantParams symmetric_per_channel(std::vector<float> scales, int bits, std::size_t axis = 0);

  std::int64_t qmin() const;
  std::int64_t qmax() const;
  std::size_t slices() const noexcept { return scale.size(); }

  /// Switches parameterization; the runtime scale is left bit-identical.
  void set_transform(ScaleTransform t);
  /// Vector the optimizer updates for the scale: scale (raw) or log2_scale.
  std::vector<float>& trainable_scale() { return transform == ScaleTransform::kLog2 ? log2_scale : scale; }
  /// Re-derives the runtime scale from log2_scale (no-op for raw). Returns the
  /// number of raw scales that had to be clamped to kMinScale.
  std::size_t sync_scale();
  /// Throws ConfigError when an invariant is violated.
  void validate() const;

  bool operator==(const QuantParams&) const = default;
};

/// Gradients in the optimizer-visible parameterization of the owning QuantParams.
struct QuantGrads {
  std::vector<float> scale;
  std::vector<float> zero_point;

  void reset(std::size_t slices) {
    scale.assign(slices, 0.0f);
    zero_point.assign(slices, 0.0f);
  }
};

/// Running MinMax range per slice; observing can only widen the range.
class RangeObserver {
 public:
  RangeObserver() = default;
  explicit RangeObserver(Granularity g, std::size_t axis = 0) : granularity_(g), axis_(axis) {}

  void observe(const Tensor& t);
  bool seen() const noexcept { return !min_.empty(); }
  const std::vector<float>& min() const noexcept { return min_; }
  const std::vector<float>& max() const noexcept { return max_; }
  Granularity granularity() const noexcept { return granularity_; }
  std::size_t axis() const noexcept { return axis_; }

 private:
  Granularity granularity_ = Granularity::kPerTensor;
  std::size_t axis_ = 0;
  std::vector<float> min_, max_;
};

struct AsymParams {
  float scale;
  float zero_point;
};

/// S = (beta - alpha)/(2^b - 1), Z = clamp(-round(alpha/S), 0, 2^b - 1).
AsymParams asym_params(double alpha, double beta, int bits);
/// S = max(|alpha|, |beta|)/(2^(b-1) - 1).
float sym_scale(double alpha, double beta, int bits);

/// Builds parameters from an observer. A degenerate slice (empty range for
/// asymmetric, all-zero for symmetric) gets S = 1 and, if asymmetric, a zero
/// point chosen so the constant value is representable.
QuantParams params_from_observer(const RangeObserver& obs, int bits, bool symmetric);

/// Per-element position relative to the quantization range.
enum class Region : std::int8_t { kLow = -1, kInRange = 0, kHigh = 1 };

struct FakeQuantResult {
  Tensor out;
  std::vector<Region> region;
};

FakeQuantResult fake_quant(const Tensor& x, const QuantParams& qp);
/// Requires an asymmetric qp.
Tensor fake_quant_asym(const Tensor& x, const QuantParams& qp);
/// Requires a symmetric qp whose slice count matches the tensor's channel axis.
Tensor fake_quant_sym(const Tensor& w, const QuantParams& qp);
/// Integer codes q of the forward map.
std::vector<std::int32_t> quantize_codes(const Tensor& x, const QuantParams& qp);

/// Straight-through estimator: dIn = dOut where in range, 0 where clamped.
Tensor ste_backward(const Tensor& dout, std::span<const Region> region);

/// dL/dS and dL/dZ per slice, summed with dOut weights. Returned in the
/// optimizer-visible parameterization: under log2 the scale gradient is
/// chained as dS * S * ln 2.
QuantGrads qparam_grads(const Tensor& dout, const Tensor& x, const QuantParams& qp, std::span<const Region> region);

/// Tape op. When `grads` is non-null the node is trainable and the backward
/// pass accumulates qparam gradients into it.
Var fake_quant(Var x, const QuantParams& qp, QuantGrads* grads);

}  // namespace efqat

#endif  // EFQAT_QUANTIZER_HPP_
