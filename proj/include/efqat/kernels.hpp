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

// Matmul-class kernels (linear, conv2d) with live multiply-accumulate counting
// and row-selective weight gradients.
//
// Every kernel reduces in a fixed order (ascending inner index), so results are
// bit-reproducible for a given build. A MAC is one multiply-accumulate; bias
// additions and data movement (im2col, transposes) are not counted.

#ifndef EFQAT_KERNELS_HPP_
#define EFQAT_KERNELS_HPP_

#include <cstddef>
#include <cstdint>
#include <vector>

#include "efqat/tensor.hpp"

namespace efqat {

struct MacTally {
  std::uint64_t forward = 0;
  std::uint64_t input_grad = 0;
  std::uint64_t weight_grad = 0;

  std::uint64_t backward() const noexcept { return input_grad + weight_grad; }
  MacTally& operator+=(const MacTally& o) {
    forward += o.forward;
    input_grad += o.input_grad;
    weight_grad += o.weight_grad;
    return *this;
  }
  bool operator==(const MacTally&) const = default;
};

/// Output-channel selection for a weight layer. rows[i] != 0 means channel i is
/// unfrozen and its weight gradient is computed.
struct RowMask {
  int layer = -1;
  std::vector<std::uint8_t> rows;

  static RowMask filled(int layer, std::size_t channels, bool unfrozen) {
    return RowMask{layer, std::vector<std::uint8_t>(channels, unfrozen ? 1 : 0)};
  }
  std::size_t size() const noexcept { return rows.size(); }
  bool operator[](std::size_t i) const { return rows[i] != 0; }
  std::size_t popcount() const noexcept;
  bool all() const noexcept { return popcount() == rows.size(); }
  bool none() const noexcept { return popcount() == 0; }
  bool operator==(const RowMask&) const = default;
};

struct GradPair {
  Tensor dx;
  Tensor dw;
};

/// C[M×N] += A[M×K] · B[K×N]. Returns the number of MACs executed.
std::uint64_t gemm_accumulate(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                              std::size_t n);

/// Plain 2-D product; adds m·k·n to macs->forward when macs is given.
Tensor matmul(const Tensor& a, const Tensor& b, MacTally* macs = nullptr);
Tensor transpose2d(const Tensor& a);

/// y = x · wᵀ (+ bias). x: [m×C_in], w: [C_out×C_in], bias: [C_out] or null.
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor* bias, MacTally* macs = nullptr);

/// dX = dY·W (always); dW = dYᵀ·X on rows with mask true, exact zeros elsewhere.
/// A null mask takes the dense path (all rows, no mask test).
GradPair linear_backward(const Tensor& dy, const Tensor& x, const Tensor& w, const RowMask* mask,
                         MacTally* macs = nullptr);

struct ConvGeometry {
  std::size_t n = 0, c_in = 0, h = 0, w = 0;
  std::size_t c_out = 0, k = 0, stride = 1, padding = 0;
  std::size_t h_out = 0, w_out = 0;

  std::size_t patch() const noexcept { return c_in * k * k; }
  std::size_t spatial_out() const noexcept { return h_out * w_out; }
};

/// Validates x [N×C_in×H×W] against w [C_out×C_in×k×k]; throws DimensionError when
/// the channel counts disagree, the kernel is not square, or the output is empty.
ConvGeometry conv_geometry(const Shape& x, const Shape& w, std::size_t stride, std::size_t padding);
std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t padding);

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* bias, std::size_t stride,
                      std::size_t padding, MacTally* macs = nullptr);

/// Input gradient over all channels; weight gradient only for mask-true output
/// channels (im2col formulation, zero padding multiplied through so the MAC
/// count is exactly k²·C_in·C_out·H_out·W_out per sample for dX).
GradPair conv2d_backward(const Tensor& dy, const Tensor& x, const Tensor& w, std::size_t stride,
                         std::size_t padding, const RowMask* mask, MacTally* macs = nullptr);

}  // namespace efqat

#endif  // EFQAT_KERNELS_HPP_
