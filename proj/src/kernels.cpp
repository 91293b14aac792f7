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

#include "efqat/kernels.hpp"

#include <algorithm>

#include "efqat/error.hpp"

namespace efqat {

std::size_t RowMask::popcount() const noexcept {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](std::uint8_t r) { return r != 0; }));
}

std::uint64_t gemm_accumulate(const float* __restrict a, const float* __restrict b, float* __restrict c,
                              std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    const float* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = arow[p];
      const float* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return static_cast<std::uint64_t>(m) * k * n;
}

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + " must be rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

void check_mask(const RowMask* mask, std::size_t c_out) {
  if (mask && mask->size() != c_out) {
    throw ConfigError("row mask for layer " + std::to_string(mask->layer) + " has length " +
                      std::to_string(mask->size()) + " but the layer has " + std::to_string(c_out) +
                      " output channels");
  }
}

// cols[(c·k + ky)·k + kx][oy·W_out + ox]
void im2col(const float* x, const ConvGeometry& g, float* cols) {
  const std::size_t hw = g.spatial_out();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        float* row = cols + ((c * g.k + ky) * g.k + kx) * hw;
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w);
            row[oy * g.w_out + ox] = inside ? x[(c * g.h + iy) * g.w + ix] : 0.0f;
          }
        }
      }
    }
  }
}

// Transposed layout: colst[oy·W_out + ox][(c·k + ky)·k + kx]
void im2col_transposed(const float* x, const ConvGeometry& g, float* colst) {
  const std::size_t patch = g.patch();
  for (std::size_t oy = 0; oy < g.h_out; ++oy) {
    for (std::size_t ox = 0; ox < g.w_out; ++ox) {
      float* row = colst + (oy * g.w_out + ox) * patch;
      for (std::size_t c = 0; c < g.c_in; ++c) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w);
            row[(c * g.k + ky) * g.k + kx] = inside ? x[(c * g.h + iy) * g.w + ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_accumulate(const float* cols, const ConvGeometry& g, float* dx) {
  const std::size_t hw = g.spatial_out();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const float* row = cols + ((c * g.k + ky) * g.k + kx) * hw;
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            dx[(c * g.h + iy) * g.w + ix] += row[oy * g.w_out + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor transpose2d(const Tensor& a) {
  require_rank(a, 2, "transpose operand");
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor t({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = a[i * c + j];
  return t;
}

Tensor matmul(const Tensor& a, const Tensor& b, MacTally* macs) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(1)});
  const std::uint64_t n = gemm_accumulate(a.data(), b.data(), c.data(), a.dim(0), a.dim(1), b.dim(1));
  if (macs) macs->forward += n;
  return c;
}

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor* bias, MacTally* macs) {
  require_rank(x, 2, "linear input");
  require_rank(w, 2, "linear weight");
  if (x.dim(1) != w.dim(1)) {
    throw DimensionError("linear input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
  }
  const std::size_t m = x.dim(0), c_out = w.dim(0);
  Tensor y({m, c_out});
  if (bias) {
    if (bias->numel() != c_out) throw DimensionError("linear bias " + shape_str(bias->shape()) + " vs C_out " + std::to_string(c_out));
    for (std::size_t i = 0; i < m; ++i) std::copy(bias->data(), bias->data() + c_out, y.data() + i * c_out);
  }
  const Tensor wt = transpose2d(w);
  const std::uint64_t n = gemm_accumulate(x.data(), wt.data(), y.data(), m, x.dim(1), c_out);
  if (macs) macs->forward += n;
  return y;
}

GradPair linear_backward(const Tensor& dy, const Tensor& x, const Tensor& w, const RowMask* mask, MacTally* macs) {
  require_rank(dy, 2, "linear output gradient");
  require_rank(x, 2, "linear input");
  require_rank(w, 2, "linear weight");
  const std::size_t m = x.dim(0), c_in = w.dim(1), c_out = w.dim(0);
  if (x.dim(1) != c_in || dy.dim(0) != m || dy.dim(1) != c_out) {
    throw DimensionError("linear backward shapes disagree: dY " + shape_str(dy.shape()) + ", X " +
                         shape_str(x.shape()) + ", W " + shape_str(w.shape()));
  }
  check_mask(mask, c_out);

  GradPair out{Tensor({m, c_in}), Tensor({c_out, c_in})};
  std::uint64_t input_macs = gemm_accumulate(dy.data(), w.data(), out.dx.data(), m, c_out, c_in);
  std::uint64_t weight_macs = 0;

  if (!mask) {
    const Tensor dyt = transpose2d(dy);
    weight_macs = gemm_accumulate(dyt.data(), x.data(), out.dw.data(), c_out, m, c_in);
  } else if (!mask->none()) {
    // Gather the unfrozen columns of dY, multiply, scatter back into their rows.
    const Tensor dyt = transpose2d(dy);
    for (std::size_t o = 0; o < c_out; ++o) {
      if (!(*mask)[o]) continue;
      weight_macs += gemm_accumulate(dyt.data() + o * m, x.data(), out.dw.data() + o * c_in, 1, m, c_in);
    }
  }
  if (macs) {
    macs->input_grad += input_macs;
    macs->weight_grad += weight_macs;
  }
  return out;
}

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw DimensionError("convolution stride must be positive");
  if (in + 2 * padding < k) {
    throw DimensionError("convolution output extent is nonpositive: input " + std::to_string(in) + ", kernel " +
                         std::to_string(k) + ", padding " + std::to_string(padding));
  }
  return (in + 2 * padding - k) / stride + 1;
}

ConvGeometry conv_geometry(const Shape& x, const Shape& w, std::size_t stride, std::size_t padding) {
  if (x.size() != 4 || w.size() != 4) {
    throw DimensionError("conv2d expects rank-4 input and weight, got " + shape_str(x) + " and " + shape_str(w));
  }
  if (x[1] != w[1] || w[2] != w[3]) {
    throw DimensionError("conv2d input " + shape_str(x) + " incompatible with weight " + shape_str(w));
  }
  ConvGeometry g;
  g.n = x[0];
  g.c_in = x[1];
  g.h = x[2];
  g.w = x[3];
  g.c_out = w[0];
  g.k = w[2];
  g.stride = stride;
  g.padding = padding;
  g.h_out = conv_out_extent(g.h, g.k, stride, padding);
  g.w_out = conv_out_extent(g.w, g.k, stride, padding);
  return g;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* bias, std::size_t stride, std::size_t padding,
                      MacTally* macs) {
  const ConvGeometry g = conv_geometry(x.shape(), w.shape(), stride, padding);
  if (bias && bias->numel() != g.c_out) throw DimensionError("conv2d bias " + shape_str(bias->shape()) + " vs C_out " + std::to_string(g.c_out));
  const std::size_t hw = g.spatial_out(), patch = g.patch();
  Tensor y({g.n, g.c_out, g.h_out, g.w_out});
  std::vector<float> cols(patch * hw);
  std::uint64_t n_macs = 0;
  for (std::size_t n = 0; n < g.n; ++n) {
    float* yn = y.data() + n * g.c_out * hw;
    if (bias) {
      for (std::size_t o = 0; o < g.c_out; ++o) std::fill(yn + o * hw, yn + (o + 1) * hw, (*bias)[o]);
    }
    im2col(x.data() + n * g.c_in * g.h * g.w, g, cols.data());
    n_macs += gemm_accumulate(w.data(), cols.data(), yn, g.c_out, patch, hw);
  }
  if (macs) macs->forward += n_macs;
  return y;
}

GradPair conv2d_backward(const Tensor& dy, const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding,
                         const RowMask* mask, MacTally* macs) {
  const ConvGeometry g = conv_geometry(x.shape(), w.shape(), stride, padding);
  if (dy.shape() != Shape{g.n, g.c_out, g.h_out, g.w_out}) {
    throw DimensionError("conv2d output gradient " + shape_str(dy.shape()) + " does not match output shape " +
                         shape_str({g.n, g.c_out, g.h_out, g.w_out}));
  }
  check_mask(mask, g.c_out);
  const std::size_t hw = g.spatial_out(), patch = g.patch();
  const Tensor w2 = w.reshaped({g.c_out, patch});
  const Tensor wt = transpose2d(w2);

  GradPair out{Tensor(x.shape()), Tensor(w.shape())};
  std::vector<float> dcols(patch * hw);
  std::vector<float> colst;
  const bool any_rows = !mask || !mask->none();
  if (any_rows) colst.resize(hw * patch);

  std::uint64_t input_macs = 0, weight_macs = 0;
  for (std::size_t n = 0; n < g.n; ++n) {
    const float* dyn = dy.data() + n * g.c_out * hw;
    std::fill(dcols.begin(), dcols.end(), 0.0f);
    input_macs += gemm_accumulate(wt.data(), dyn, dcols.data(), patch, g.c_out, hw);
    col2im_accumulate(dcols.data(), g, out.dx.data() + n * g.c_in * g.h * g.w);

    if (!any_rows) continue;
    im2col_transposed(x.data() + n * g.c_in * g.h * g.w, g, colst.data());
    if (!mask) {
      weight_macs += gemm_accumulate(dyn, colst.data(), out.dw.data(), g.c_out, hw, patch);
    } else {
      for (std::size_t o = 0; o < g.c_out; ++o) {
        if (!(*mask)[o]) continue;
        weight_macs += gemm_accumulate(dyn + o * hw, colst.data(), out.dw.data() + o * patch, 1, hw, patch);
      }
    }
  }
  if (macs) {
    macs->input_grad += input_macs;
    macs->weight_grad += weight_macs;
  }
  return out;
}

}  // namespace efqat
