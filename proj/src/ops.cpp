// Copyright 2026 the fusiondet authors
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

#include "fusiondet/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace fusiondet
{

namespace
{

using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

bool wants_grad(const TensorImpl & p) { return p.requires_grad || bool(p.backward_fn); }

void check_same_shape(const Tensor & a, const Tensor & b, const char * op)
{
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(
      std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
      shape_str(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor & a, const Tensor & b)
{
  check_same_shape(a, b, "add");
  std::vector<Scalar> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = a.data()[i] + b.data()[i];
  }
  return make_node(a.shape(), std::move(out), {a, b}, [](TensorImpl & self) {
    for (int k = 0; k < 2; ++k) {
      TensorImpl & p = *self.parents[k];
      if (!wants_grad(p)) continue;
      p.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        p.grad[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor & a, const Tensor & b)
{
  check_same_shape(a, b, "sub");
  std::vector<Scalar> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = a.data()[i] - b.data()[i];
  }
  return make_node(a.shape(), std::move(out), {a, b}, [](TensorImpl & self) {
    for (int k = 0; k < 2; ++k) {
      TensorImpl & p = *self.parents[k];
      if (!wants_grad(p)) continue;
      p.ensure_grad();
      const Scalar sign = (k == 0) ? Scalar(1) : Scalar(-1);
      for (size_t i = 0; i < self.grad.size(); ++i) {
        p.grad[i] += sign * self.grad[i];
      }
    }
  });
}

Tensor mul(const Tensor & a, const Tensor & b)
{
  check_same_shape(a, b, "mul");
  std::vector<Scalar> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = a.data()[i] * b.data()[i];
  }
  return make_node(a.shape(), std::move(out), {a, b}, [](TensorImpl & self) {
    TensorImpl & pa = *self.parents[0];
    TensorImpl & pb = *self.parents[1];
    if (wants_grad(pa)) {
      pa.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        pa.grad[i] += self.grad[i] * pb.data[i];
      }
    }
    if (wants_grad(pb)) {
      pb.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        pb.grad[i] += self.grad[i] * pa.data[i];
      }
    }
  });
}

Tensor scale(const Tensor & a, Scalar s)
{
  std::vector<Scalar> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = a.data()[i] * s;
  }
  return make_node(a.shape(), std::move(out), {a}, [s](TensorImpl & self) {
    TensorImpl & p = *self.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      p.grad[i] += s * self.grad[i];
    }
  });
}

Tensor add_scalar(const Tensor & a, Scalar s)
{
  std::vector<Scalar> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = a.data()[i] + s;
  }
  return make_node(a.shape(), std::move(out), {a}, [](TensorImpl & self) {
    TensorImpl & p = *self.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      p.grad[i] += self.grad[i];
    }
  });
}

Tensor relu(const Tensor & a)
{
  std::vector<Scalar> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = a.data()[i] > Scalar(0) ? a.data()[i] : Scalar(0);
  }
  return make_node(a.shape(), std::move(out), {a}, [](TensorImpl & self) {
    TensorImpl & p = *self.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      if (p.data[i] > Scalar(0)) {
        p.grad[i] += self.grad[i];
      }
    }
  });
}

Tensor sigmoid(const Tensor & a)
{
  std::vector<Scalar> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const Scalar x = a.data()[i];
    // Branch keeps exp() argument non-positive.
    out[i] = x >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-x))
                            : std::exp(x) / (Scalar(1) + std::exp(x));
  }
  return make_node(a.shape(), std::move(out), {a}, [](TensorImpl & self) {
    TensorImpl & p = *self.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const Scalar y = self.data[i];
      p.grad[i] += self.grad[i] * y * (Scalar(1) - y);
    }
  });
}

Tensor softplus(const Tensor & a)
{
  std::vector<Scalar> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const Scalar x = a.data()[i];
    out[i] = x > Scalar(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  }
  return make_node(a.shape(), std::move(out), {a}, [](TensorImpl & self) {
    TensorImpl & p = *self.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const Scalar x = p.data[i];
      const Scalar s = x >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-x))
                                      : std::exp(x) / (Scalar(1) + std::exp(x));
      p.grad[i] += self.grad[i] * s;
    }
  });
}

Tensor reshape(const Tensor & a, std::vector<int64_t> new_shape)
{
  if (shape_numel(new_shape) != a.numel()) {
    throw std::invalid_argument(
      "reshape: numel mismatch " + shape_str(a.shape()) + " -> " + shape_str(new_shape));
  }
  std::vector<Scalar> out = a.data();
  return make_node(std::move(new_shape), std::move(out), {a}, [](TensorImpl & self) {
    TensorImpl & p = *self.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      p.grad[i] += self.grad[i];
    }
  });
}

namespace
{

std::vector<int64_t> row_major_strides(const std::vector<int64_t> & shape)
{
  std::vector<int64_t> strides(shape.size(), 1);
  for (size_t i = shape.size(); i-- > 1;) {
    strides[i - 1] = strides[i] * shape[i];
  }
  return strides;
}

// Maps flat output index -> flat input index for a permutation.
std::vector<int64_t> permute_index_map(
  const std::vector<int64_t> & in_shape, const std::vector<size_t> & axes)
{
  const auto in_strides = row_major_strides(in_shape);
  std::vector<int64_t> out_shape(axes.size());
  for (size_t i = 0; i < axes.size(); ++i) {
    out_shape[i] = in_shape[axes[i]];
  }
  const int64_t n = shape_numel(out_shape);
  std::vector<int64_t> map(static_cast<size_t>(n));
  std::vector<int64_t> idx(axes.size(), 0);
  for (int64_t flat = 0; flat < n; ++flat) {
    int64_t src = 0;
    for (size_t d = 0; d < axes.size(); ++d) {
      src += idx[d] * in_strides[axes[d]];
    }
    map[static_cast<size_t>(flat)] = src;
    for (size_t d = axes.size(); d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor permute(const Tensor & a, const std::vector<size_t> & axes)
{
  if (axes.size() != a.shape().size()) {
    throw std::invalid_argument("permute: axes rank mismatch");
  }
  std::vector<bool> used(axes.size(), false);
  for (size_t ax : axes) {
    if (ax >= axes.size() || used[ax]) {
      throw std::invalid_argument("permute: invalid axis permutation");
    }
    used[ax] = true;
  }
  auto map = permute_index_map(a.shape(), axes);
  std::vector<int64_t> out_shape(axes.size());
  for (size_t i = 0; i < axes.size(); ++i) {
    out_shape[i] = a.shape()[axes[i]];
  }
  std::vector<Scalar> out(map.size());
  for (size_t i = 0; i < map.size(); ++i) {
    out[i] = a.data()[static_cast<size_t>(map[i])];
  }
  auto shared_map = std::make_shared<std::vector<int64_t>>(std::move(map));
  return make_node(std::move(out_shape), std::move(out), {a}, [shared_map](TensorImpl & self) {
    TensorImpl & p = *self.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      p.grad[static_cast<size_t>((*shared_map)[i])] += self.grad[i];
    }
  });
}

Tensor concat_channels(const std::vector<Tensor> & inputs)
{
  if (inputs.empty()) {
    throw std::invalid_argument("concat_channels: empty input list");
  }
  const auto & first = inputs[0].shape();
  int64_t total_c = 0;
  for (const Tensor & t : inputs) {
    const auto & s = t.shape();
    if (s.size() != first.size() ||
        !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
      throw std::invalid_argument(
        "concat_channels: non-channel extents differ: " + shape_str(first) + " vs " +
        shape_str(s));
    }
    total_c += s[0];
  }
  std::vector<int64_t> out_shape = first;
  out_shape[0] = total_c;
  std::vector<Scalar> out;
  out.reserve(static_cast<size_t>(shape_numel(out_shape)));
  // Axis-0 blocks are contiguous in row-major layout.
  for (const Tensor & t : inputs) {
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  return make_node(std::move(out_shape), std::move(out), inputs, [](TensorImpl & self) {
    size_t offset = 0;
    for (auto & pp : self.parents) {
      TensorImpl & p = *pp;
      const size_t n = p.data.size();
      if (wants_grad(p)) {
        p.ensure_grad();
        for (size_t i = 0; i < n; ++i) {
          p.grad[i] += self.grad[offset + i];
        }
      }
      offset += n;
    }
  });
}

Tensor slice_channels(const Tensor & a, int64_t begin, int64_t end)
{
  const auto & s = a.shape();
  if (begin < 0 || end > s[0] || begin >= end) {
    throw std::invalid_argument("slice_channels: bad range");
  }
  const int64_t per_c = a.numel() / s[0];
  std::vector<int64_t> out_shape = s;
  out_shape[0] = end - begin;
  std::vector<Scalar> out(
    a.data().begin() + static_cast<size_t>(begin * per_c),
    a.data().begin() + static_cast<size_t>(end * per_c));
  const size_t offset = static_cast<size_t>(begin * per_c);
  return make_node(std::move(out_shape), std::move(out), {a}, [offset](TensorImpl & self) {
    TensorImpl & p = *self.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      p.grad[offset + i] += self.grad[i];
    }
  });
}

Tensor gather_rows(const Tensor & a, const std::vector<int64_t> & rows)
{
  if (a.shape().size() != 2) {
    throw std::invalid_argument("gather_rows: expected rank-2 tensor");
  }
  const int64_t n_rows = a.shape()[0];
  const int64_t width = a.shape()[1];
  std::vector<Scalar> out;
  out.reserve(rows.size() * static_cast<size_t>(width));
  for (int64_t r : rows) {
    if (r < 0 || r >= n_rows) {
      throw std::out_of_range("gather_rows: row index out of range");
    }
    const auto * src = a.data().data() + r * width;
    out.insert(out.end(), src, src + width);
  }
  auto idx = std::make_shared<std::vector<int64_t>>(rows);
  return make_node(
    {static_cast<int64_t>(rows.size()), width}, std::move(out), {a}, [idx, width](TensorImpl & self) {
      TensorImpl & p = *self.parents[0];
      if (!wants_grad(p)) return;
      p.ensure_grad();
      for (size_t i = 0; i < idx->size(); ++i) {
        const int64_t r = (*idx)[i];
        for (int64_t c = 0; c < width; ++c) {
          p.grad[static_cast<size_t>(r * width + c)] +=
            self.grad[i * static_cast<size_t>(width) + static_cast<size_t>(c)];
        }
      }
    });
}

Tensor sum(const Tensor & a)
{
  Scalar total = 0;
  for (Scalar v : a.data()) total += v;
  return make_node({1}, {total}, {a}, [](TensorImpl & self) {
    TensorImpl & p = *self.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t i = 0; i < p.grad.size(); ++i) {
      p.grad[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor & a) { return scale(sum(a), Scalar(1) / Scalar(a.numel())); }

Tensor weighted_sum(const Tensor & a, const std::vector<Scalar> & weights)
{
  if (weights.size() != a.data().size()) {
    throw std::invalid_argument("weighted_sum: weight length mismatch");
  }
  Scalar total = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    total += a.data()[i] * weights[i];
  }
  auto w = std::make_shared<std::vector<Scalar>>(weights);
  return make_node({1}, {total}, {a}, [w](TensorImpl & self) {
    TensorImpl & p = *self.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t i = 0; i < p.grad.size(); ++i) {
      p.grad[i] += self.grad[0] * (*w)[i];
    }
  });
}

Tensor linear(const Tensor & x, const Tensor & weight, const Tensor & bias)
{
  if (x.shape().size() != 2 || weight.shape().size() != 2 || bias.shape().size() != 1) {
    throw std::invalid_argument("linear: expected [NxF], [CxF], [C]");
  }
  const int64_t n = x.shape()[0];
  const int64_t f = x.shape()[1];
  const int64_t c = weight.shape()[0];
  if (weight.shape()[1] != f || bias.shape()[0] != c) {
    throw std::invalid_argument(
      "linear: dimension mismatch x=" + shape_str(x.shape()) +
      " w=" + shape_str(weight.shape()) + " b=" + shape_str(bias.shape()));
  }
  std::vector<Scalar> out(static_cast<size_t>(n * c));
  {
    ConstMatMap xm(x.data().data(), n, f);
    ConstMatMap wm(weight.data().data(), c, f);
    MatMap om(out.data(), n, c);
    om.noalias() = xm * wm.transpose();
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t j = 0; j < c; ++j) {
        om(i, j) += bias.data()[static_cast<size_t>(j)];
      }
    }
  }
  return make_node({n, c}, std::move(out), {x, weight, bias}, [n, f, c](TensorImpl & self) {
    TensorImpl & px = *self.parents[0];
    TensorImpl & pw = *self.parents[1];
    TensorImpl & pb = *self.parents[2];
    ConstMatMap gy(self.grad.data(), n, c);
    if (wants_grad(px)) {
      px.ensure_grad();
      MatMap gx(px.grad.data(), n, f);
      ConstMatMap wm(pw.data.data(), c, f);
      gx.noalias() += gy * wm;
    }
    if (wants_grad(pw)) {
      pw.ensure_grad();
      MatMap gw(pw.grad.data(), c, f);
      ConstMatMap xm(px.data.data(), n, f);
      gw.noalias() += gy.transpose() * xm;
    }
    if (wants_grad(pb)) {
      pb.ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < c; ++j) {
          pb.grad[static_cast<size_t>(j)] += gy(i, j);
        }
      }
    }
  });
}

std::array<int64_t, 3> conv3d_output_extents(
  const std::array<int64_t, 3> & in, const std::array<int64_t, 3> & kernel, const Conv3dSpec & spec)
{
  std::array<int64_t, 3> out{};
  for (int a = 0; a < 3; ++a) {
    const int64_t padded = in[a] + 2 * spec.padding[a];
    if (padded < kernel[a]) {
      throw std::invalid_argument(
        "conv3d: padded extent " + std::to_string(padded) + " smaller than kernel " +
        std::to_string(kernel[a]));
    }
    out[a] = (padded - kernel[a]) / spec.stride[a] + 1;
    if (out[a] <= 0) {
      throw std::invalid_argument("conv3d: zero-extent output");
    }
  }
  return out;
}

namespace
{

struct ConvDims
{
  int64_t c_in, c_out;
  std::array<int64_t, 3> in, k, out;
  Conv3dSpec spec;
  int64_t patch() const { return c_in * k[0] * k[1] * k[2]; }
  int64_t cols() const { return out[0] * out[1] * out[2]; }
};

// Fills `col` (patch x chunk, row-major) for the output rows
// [row0, row0+nrows), where a "row" is one (od, oh) scanline of out[2]
// columns.  Aligning chunks to scanlines makes every fill a contiguous
// run: for the common stride-1 w-axis each patch row is a prefix of
// zeros, a straight copy, and a suffix of zeros.
void im2col_rows(
  const Scalar * in_data, const ConvDims & d, int64_t row0, int64_t nrows, Scalar * col)
{
  const int64_t w_out = d.out[2];
  const int64_t chunk = nrows * w_out;
  const int64_t in_hw = d.in[1] * d.in[2];
  const int64_t sw = d.spec.stride[2];
  const int64_t pw = d.spec.padding[2];
  int64_t prow = 0;
  for (int64_t c = 0; c < d.c_in; ++c) {
    const Scalar * base_c = in_data + c * d.in[0] * in_hw;
    for (int64_t kd = 0; kd < d.k[0]; ++kd) {
      for (int64_t kh = 0; kh < d.k[1]; ++kh) {
        for (int64_t kw = 0; kw < d.k[2]; ++kw, ++prow) {
          Scalar * dst_base = col + prow * chunk;
          // ow range whose iw = ow*sw - pw + kw stays in bounds.
          const int64_t lo =
            std::max<int64_t>(0, (pw - kw + sw - 1) / sw);
          const int64_t hi =
            std::min(w_out, (d.in[2] - 1 + pw - kw) / sw + 1);
          for (int64_t r = 0; r < nrows; ++r) {
            const int64_t od = (row0 + r) / d.out[1];
            const int64_t oh = (row0 + r) % d.out[1];
            const int64_t id = od * d.spec.stride[0] - d.spec.padding[0] + kd;
            const int64_t ih = oh * d.spec.stride[1] - d.spec.padding[1] + kh;
            Scalar * dst = dst_base + r * w_out;
            if (id < 0 || id >= d.in[0] || ih < 0 || ih >= d.in[1] || lo >= hi) {
              std::fill(dst, dst + w_out, Scalar(0));
              continue;
            }
            const Scalar * src = base_c + id * in_hw + ih * d.in[2];
            std::fill(dst, dst + lo, Scalar(0));
            if (sw == 1) {
              const Scalar * s = src + lo - pw + kw;
              std::copy(s, s + (hi - lo), dst + lo);
            } else {
              for (int64_t ow = lo; ow < hi; ++ow) {
                dst[ow] = src[ow * sw - pw + kw];
              }
            }
            std::fill(dst + hi, dst + w_out, Scalar(0));
          }
        }
      }
    }
  }
}

// Scatter-add of a (patch x chunk) column chunk back into the input
// gradient; mirrors the im2col_rows layout.
void col2im_rows(
  const Scalar * col, const ConvDims & d, int64_t row0, int64_t nrows, Scalar * in_grad)
{
  const int64_t w_out = d.out[2];
  const int64_t chunk = nrows * w_out;
  const int64_t in_hw = d.in[1] * d.in[2];
  const int64_t sw = d.spec.stride[2];
  const int64_t pw = d.spec.padding[2];
  int64_t prow = 0;
  for (int64_t c = 0; c < d.c_in; ++c) {
    Scalar * base_c = in_grad + c * d.in[0] * in_hw;
    for (int64_t kd = 0; kd < d.k[0]; ++kd) {
      for (int64_t kh = 0; kh < d.k[1]; ++kh) {
        for (int64_t kw = 0; kw < d.k[2]; ++kw, ++prow) {
          const Scalar * src_base = col + prow * chunk;
          const int64_t lo =
            std::max<int64_t>(0, (pw - kw + sw - 1) / sw);
          const int64_t hi =
            std::min(w_out, (d.in[2] - 1 + pw - kw) / sw + 1);
          if (lo >= hi) continue;
          for (int64_t r = 0; r < nrows; ++r) {
            const int64_t od = (row0 + r) / d.out[1];
            const int64_t oh = (row0 + r) % d.out[1];
            const int64_t id = od * d.spec.stride[0] - d.spec.padding[0] + kd;
            const int64_t ih = oh * d.spec.stride[1] - d.spec.padding[1] + kh;
            if (id < 0 || id >= d.in[0] || ih < 0 || ih >= d.in[1]) continue;
            const Scalar * src = src_base + r * w_out;
            Scalar * g = base_c + id * in_hw + ih * d.in[2];
            if (sw == 1) {
              Scalar * gp = g - pw + kw;
              for (int64_t ow = lo; ow < hi; ++ow) gp[ow] += src[ow];
            } else {
              for (int64_t ow = lo; ow < hi; ++ow) {
                g[ow * sw - pw + kw] += src[ow];
              }
            }
          }
        }
      }
    }
  }
}

// Rows per chunk, sized so patch x chunk stays within ~2 MB of cache
// for typical channel widths.
int64_t conv_chunk_rows(const ConvDims & d)
{
  const int64_t budget = int64_t(1) << 19;
  const int64_t per_row = d.patch() * d.out[2];
  return std::max<int64_t>(1, budget / std::max<int64_t>(1, per_row));
}

}  // namespace

Tensor conv3d(const Tensor & input, const Tensor & weight, const Tensor & bias, Conv3dSpec spec)
{
  if (input.shape().size() != 4 || weight.shape().size() != 5 || bias.shape().size() != 1) {
    throw std::invalid_argument("conv3d: expected input [CxDxHxW], weight [OxIxkdxkhxkw], bias [O]");
  }
  ConvDims d;
  d.c_out = weight.shape()[0];
  d.c_in = weight.shape()[1];
  d.k = {weight.shape()[2], weight.shape()[3], weight.shape()[4]};
  d.in = {input.shape()[1], input.shape()[2], input.shape()[3]};
  d.spec = spec;
  if (input.shape()[0] != d.c_in) {
    throw std::invalid_argument(
      "conv3d: input channels " + std::to_string(input.shape()[0]) + " != kernel in_ch " +
      std::to_string(d.c_in));
  }
  if (bias.shape()[0] != d.c_out) {
    throw std::invalid_argument("conv3d: bias length != out channels");
  }
  for (int a = 0; a < 3; ++a) {
    if (d.k[a] % 2 == 0) {
      throw std::invalid_argument("conv3d: kernel extents must be odd");
    }
    if (spec.stride[a] != 1 && spec.stride[a] != 2) {
      throw std::invalid_argument("conv3d: stride components must be 1 or 2");
    }
    if (spec.padding[a] < 0) {
      throw std::invalid_argument("conv3d: negative padding");
    }
  }
  d.out = conv3d_output_extents(d.in, d.k, spec);

  const int64_t cols = d.cols();
  const int64_t patch = d.patch();
  const int64_t total_rows = d.out[0] * d.out[1];
  const int64_t chunk_rows = conv_chunk_rows(d);
  std::vector<Scalar> out(static_cast<size_t>(d.c_out * cols));
  {
    ConstMatMap wm(weight.data().data(), d.c_out, patch);
    std::vector<Scalar> col(
      static_cast<size_t>(patch * std::min(total_rows, chunk_rows) * d.out[2]));
    for (int64_t r0 = 0; r0 < total_rows; r0 += chunk_rows) {
      const int64_t nrows = std::min(chunk_rows, total_rows - r0);
      const int64_t chunk = nrows * d.out[2];
      im2col_rows(input.data().data(), d, r0, nrows, col.data());
      ConstMatMap cm(col.data(), patch, chunk);
      // Output layout [C_out x D' x H' x W'] is row-major (c_out, flat).
      Eigen::Map<Mat, 0, Eigen::OuterStride<>> om(
        out.data() + r0 * d.out[2], d.c_out, chunk,
        Eigen::OuterStride<>(static_cast<Eigen::Index>(cols)));
      om.noalias() = wm * cm;
    }
    for (int64_t c = 0; c < d.c_out; ++c) {
      const Scalar b = bias.data()[static_cast<size_t>(c)];
      Scalar * p = out.data() + c * cols;
      for (int64_t i = 0; i < cols; ++i) p[i] += b;
    }
  }

  std::vector<int64_t> out_shape{d.c_out, d.out[0], d.out[1], d.out[2]};
  return make_node(
    std::move(out_shape), std::move(out), {input, weight, bias}, [d](TensorImpl & self) {
      TensorImpl & pin = *self.parents[0];
      TensorImpl & pw = *self.parents[1];
      TensorImpl & pb = *self.parents[2];
      const int64_t cols = d.cols();
      const int64_t patch = d.patch();
      const bool need_in = wants_grad(pin);
      const bool need_w = wants_grad(pw);
      const bool need_b = wants_grad(pb);
      if (need_in) pin.ensure_grad();
      if (need_w) pw.ensure_grad();
      if (need_b) pb.ensure_grad();

      ConstMatMap wm(pw.data.data(), d.c_out, patch);
      Eigen::Map<Mat, 0, Eigen::OuterStride<>> gw =
        Eigen::Map<Mat, 0, Eigen::OuterStride<>>(
          need_w ? pw.grad.data() : pw.data.data(), d.c_out, patch,
          Eigen::OuterStride<>(static_cast<Eigen::Index>(patch)));
      const int64_t total_rows = d.out[0] * d.out[1];
      const int64_t chunk_rows = conv_chunk_rows(d);
      std::vector<Scalar> col(
        static_cast<size_t>(patch * std::min(total_rows, chunk_rows) * d.out[2]));
      std::vector<Scalar> gcol(need_in ? col.size() : 0);
      for (int64_t r0 = 0; r0 < total_rows; r0 += chunk_rows) {
        const int64_t nrows = std::min(chunk_rows, total_rows - r0);
        const int64_t chunk = nrows * d.out[2];
        Eigen::Map<const Mat, 0, Eigen::OuterStride<>> gy(
          self.grad.data() + r0 * d.out[2], d.c_out, chunk,
          Eigen::OuterStride<>(static_cast<Eigen::Index>(cols)));
        if (need_w || need_in) {
          // Recompute the column chunk; full materialization does not fit.
          if (need_w) {
            im2col_rows(pin.data.data(), d, r0, nrows, col.data());
            ConstMatMap cm(col.data(), patch, chunk);
            gw.noalias() += gy * cm.transpose();
          }
          if (need_in) {
            MatMap gcm(gcol.data(), patch, chunk);
            gcm.noalias() = wm.transpose() * gy;
            col2im_rows(gcol.data(), d, r0, nrows, pin.grad.data());
          }
        }
        if (need_b) {
          for (int64_t c = 0; c < d.c_out; ++c) {
            Scalar s = 0;
            for (int64_t j = 0; j < chunk; ++j) s += gy(c, j);
            pb.grad[static_cast<size_t>(c)] += s;
          }
        }
      }
    });
}

namespace
{

Tensor pow_const(const Tensor & a, Scalar gamma)
{
  if (gamma == Scalar(0)) {
    return Tensor::full(a.shape(), Scalar(1));
  }
  std::vector<Scalar> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = std::pow(a.data()[i], gamma);
  }
  return make_node(a.shape(), std::move(out), {a}, [gamma](TensorImpl & self) {
    TensorImpl & p = *self.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      p.grad[i] += self.grad[i] * gamma * std::pow(p.data[i], gamma - Scalar(1));
    }
  });
}

}  // namespace

Tensor focal_loss(
  const Tensor & logits, const std::vector<int> & labels, Scalar alpha, Scalar gamma)
{
  const size_t n = logits.data().size();
  if (labels.size() != n) {
    throw std::invalid_argument("focal_loss: label count mismatch");
  }
  int64_t positives = 0;
  for (int l : labels) {
    if (l > 0) ++positives;
  }
  const Scalar norm = Scalar(1) / Scalar(std::max<int64_t>(positives, 1));

  Tensor p = sigmoid(logits);
  Tensor one_minus_p = add_scalar(scale(p, Scalar(-1)), Scalar(1));
  // -log(p) = softplus(-x), -log(1-p) = softplus(x).
  Tensor nll_pos = softplus(scale(logits, Scalar(-1)));
  Tensor nll_neg = softplus(logits);
  Tensor pos_term = mul(pow_const(one_minus_p, gamma), nll_pos);
  Tensor neg_term = mul(pow_const(p, gamma), nll_neg);

  std::vector<Scalar> w_pos(n, Scalar(0)), w_neg(n, Scalar(0));
  for (size_t i = 0; i < n; ++i) {
    if (labels[i] > 0) {
      w_pos[i] = alpha * norm;
    } else if (labels[i] == 0) {
      w_neg[i] = (Scalar(1) - alpha) * norm;
    }
  }
  return add(weighted_sum(pos_term, w_pos), weighted_sum(neg_term, w_neg));
}

Tensor smooth_l1_loss(
  const Tensor & pred, const std::vector<Scalar> & target, const std::vector<Scalar> & row_weight,
  Scalar beta)
{
  if (pred.shape().size() != 2) {
    throw std::invalid_argument("smooth_l1_loss: expected rank-2 pred");
  }
  const int64_t rows = pred.shape()[0];
  const int64_t width = pred.shape()[1];
  if (target.size() != pred.data().size() || row_weight.size() != static_cast<size_t>(rows)) {
    throw std::invalid_argument("smooth_l1_loss: target/weight size mismatch");
  }
  Scalar total = 0;
  for (int64_t r = 0; r < rows; ++r) {
    if (row_weight[static_cast<size_t>(r)] == Scalar(0)) continue;
    Scalar row_sum = 0;
    for (int64_t c = 0; c < width; ++c) {
      const size_t i = static_cast<size_t>(r * width + c);
      const Scalar x = pred.data()[i] - target[i];
      const Scalar ax = std::abs(x);
      row_sum += ax < beta ? Scalar(0.5) * x * x / beta : ax - Scalar(0.5) * beta;
    }
    total += row_sum * row_weight[static_cast<size_t>(r)];
  }
  auto tgt = std::make_shared<std::vector<Scalar>>(target);
  auto rw = std::make_shared<std::vector<Scalar>>(row_weight);
  return make_node({1}, {total}, {pred}, [tgt, rw, rows, width, beta](TensorImpl & self) {
    TensorImpl & p = *self.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    const Scalar g = self.grad[0];
    for (int64_t r = 0; r < rows; ++r) {
      const Scalar w = (*rw)[static_cast<size_t>(r)];
      if (w == Scalar(0)) continue;
      for (int64_t c = 0; c < width; ++c) {
        const size_t i = static_cast<size_t>(r * width + c);
        const Scalar x = p.data[i] - (*tgt)[i];
        const Scalar dx = std::abs(x) < beta ? x / beta : (x > 0 ? Scalar(1) : Scalar(-1));
        p.grad[i] += g * w * dx;
      }
    }
  });
}

Tensor softmax_cross_entropy(
  const Tensor & logits, const std::vector<int> & target, const std::vector<Scalar> & row_weight)
{
  if (logits.shape().size() != 2) {
    throw std::invalid_argument("softmax_cross_entropy: expected rank-2 logits");
  }
  const int64_t rows = logits.shape()[0];
  const int64_t k = logits.shape()[1];
  if (target.size() != static_cast<size_t>(rows) || row_weight.size() != static_cast<size_t>(rows)) {
    throw std::invalid_argument("softmax_cross_entropy: target/weight size mismatch");
  }
  Scalar total = 0;
  std::vector<Scalar> probs(logits.data().size());
  for (int64_t r = 0; r < rows; ++r) {
    const Scalar * row = logits.data().data() + r * k;
    Scalar * prow = probs.data() + r * k;
    Scalar mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    Scalar z = 0;
    for (int64_t j = 0; j < k; ++j) {
      prow[j] = std::exp(row[j] - mx);
      z += prow[j];
    }
    for (int64_t j = 0; j < k; ++j) prow[j] /= z;
    const Scalar w = row_weight[static_cast<size_t>(r)];
    if (w > Scalar(0)) {
      const int t = target[static_cast<size_t>(r)];
      if (t < 0 || t >= k) {
        throw std::out_of_range("softmax_cross_entropy: target class out of range");
      }
      total -= w * std::log(std::max(prow[t], Scalar(1e-30)));
    }
  }
  auto pr = std::make_shared<std::vector<Scalar>>(std::move(probs));
  auto tg = std::make_shared<std::vector<int>>(target);
  auto rw = std::make_shared<std::vector<Scalar>>(row_weight);
  return make_node({1}, {total}, {logits}, [pr, tg, rw, rows, k](TensorImpl & self) {
    TensorImpl & p = *self.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    const Scalar g = self.grad[0];
    for (int64_t r = 0; r < rows; ++r) {
      const Scalar w = (*rw)[static_cast<size_t>(r)];
      if (w <= Scalar(0)) continue;
      const int t = (*tg)[static_cast<size_t>(r)];
      for (int64_t j = 0; j < k; ++j) {
        const size_t i = static_cast<size_t>(r * k + j);
        const Scalar onehot = (j == t) ? Scalar(1) : Scalar(0);
        p.grad[i] += g * w * ((*pr)[i] - onehot);
      }
    }
  });
}

}  // namespace fusiondet
