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

#include "fusiondet/sparse_conv.hpp"

#include <cstring>
#include <map>
#include <stdexcept>
#include <unordered_map>

#include <Eigen/Dense>

namespace fusiondet
{

namespace
{

using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatMap = Eigen::Map<RowMat>;
using ConstRowMatMap = Eigen::Map<const RowMat>;

// Gather/scatter row pairs for one kernel offset.
struct OffsetPairs
{
  std::vector<int64_t> in_rows;
  std::vector<int64_t> out_rows;
};

struct CoordHash
{
  size_t operator()(const std::array<int64_t, 3> & c) const
  {
    size_t h = 1469598103934665603ull;
    for (int64_t v : c) {
      h ^= static_cast<size_t>(v);
      h *= 1099511628211ull;
    }
    return h;
  }
};

// (input_row, kernel_flat) contributions per output site.
using Rulebook = std::vector<std::vector<std::pair<int64_t, int64_t>>>;

}  // namespace

SparseVoxelTensor sparse_conv3d(
  const SparseVoxelTensor & input, const Tensor & weight, const Tensor & bias,
  std::array<int64_t, 3> stride_zyx, std::array<int64_t, 3> padding_zyx, bool submanifold)
{
  if (weight.shape().size() != 5) {
    throw std::invalid_argument("sparse_conv3d: expected weight [OxIxkzxkyxkx]");
  }
  const int64_t c_out = weight.shape()[0];
  const int64_t c_in = weight.shape()[1];
  const std::array<int64_t, 3> k{weight.shape()[2], weight.shape()[3], weight.shape()[4]};
  if (input.channels != c_in && !input.coords.empty()) {
    throw std::invalid_argument("sparse_conv3d: channel mismatch");
  }
  for (int a = 0; a < 3; ++a) {
    if (submanifold && stride_zyx[a] != 1) {
      throw std::invalid_argument("sparse_conv3d: submanifold requires stride 1");
    }
  }

  // Grid extents in (z,y,x) order to match the dense layout.
  const std::array<int64_t, 3> in_ext{input.spec.extent[2], input.spec.extent[1],
                                      input.spec.extent[0]};
  std::array<int64_t, 3> out_ext{};
  for (int a = 0; a < 3; ++a) {
    const int64_t padded = in_ext[a] + 2 * padding_zyx[a];
    if (padded < k[a]) {
      throw std::invalid_argument("sparse_conv3d: padded extent smaller than kernel");
    }
    out_ext[a] = (padded - k[a]) / stride_zyx[a] + 1;
    if (out_ext[a] <= 0) {
      throw std::invalid_argument("sparse_conv3d: zero-extent output grid");
    }
  }

  SparseVoxelTensor out;
  out.channels = c_out;
  out.spec = input.spec;
  if (!submanifold) {
    // Output cells are stride-times coarser over the same origin.
    out.spec.extent = {out_ext[2], out_ext[1], out_ext[0]};
    for (int a = 0; a < 3; ++a) {
      const int axis_zyx = 2 - a;  // world axis a maps to (z,y,x) index 2-a
      const double cell = input.spec.cell(a) * double(stride_zyx[axis_zyx]);
      out.spec.range_max[a] = out.spec.range_min[a] + cell * double(out.spec.extent[a]);
    }
  }
  if (input.coords.empty()) {
    return out;
  }

  // Active output sites in deterministic lexicographic (z,y,x) order.
  std::map<std::array<int64_t, 3>, std::vector<std::pair<int64_t, int64_t>>> sites;
  if (submanifold) {
    std::unordered_map<std::array<int64_t, 3>, int64_t, CoordHash> index;
    index.reserve(input.coords.size());
    for (size_t i = 0; i < input.coords.size(); ++i) {
      const auto & c = input.coords[i];
      index[{c[2], c[1], c[0]}] = static_cast<int64_t>(i);
    }
    for (size_t i = 0; i < input.coords.size(); ++i) {
      const auto & c = input.coords[i];
      const std::array<int64_t, 3> o{c[2], c[1], c[0]};
      auto & list = sites[o];
      for (int64_t kz = 0; kz < k[0]; ++kz) {
        for (int64_t ky = 0; ky < k[1]; ++ky) {
          for (int64_t kx = 0; kx < k[2]; ++kx) {
            const std::array<int64_t, 3> in_c{
              o[0] - padding_zyx[0] + kz, o[1] - padding_zyx[1] + ky, o[2] - padding_zyx[2] + kx};
            auto it = index.find(in_c);
            if (it == index.end()) continue;
            list.emplace_back(it->second, (kz * k[1] + ky) * k[2] + kx);
          }
        }
      }
    }
  } else {
    for (size_t i = 0; i < input.coords.size(); ++i) {
      const auto & c = input.coords[i];
      const std::array<int64_t, 3> in_zyx{c[2], c[1], c[0]};
      for (int64_t kz = 0; kz < k[0]; ++kz) {
        for (int64_t ky = 0; ky < k[1]; ++ky) {
          for (int64_t kx = 0; kx < k[2]; ++kx) {
            const int64_t off[3] = {kz, ky, kx};
            std::array<int64_t, 3> o{};
            bool ok = true;
            for (int a = 0; a < 3; ++a) {
              const int64_t num = in_zyx[a] + padding_zyx[a] - off[a];
              if (num < 0 || num % stride_zyx[a] != 0) {
                ok = false;
                break;
              }
              o[a] = num / stride_zyx[a];
              if (o[a] >= out_ext[a]) {
                ok = false;
                break;
              }
            }
            if (!ok) continue;
            sites[o].emplace_back(
              static_cast<int64_t>(i), (kz * k[1] + ky) * k[2] + kx);
          }
        }
      }
    }
  }

  const int64_t n_out = static_cast<int64_t>(sites.size());
  const int64_t kvol = k[0] * k[1] * k[2];
  // Regroup per kernel offset so each offset runs as one gather-GEMM-scatter.
  auto by_offset = std::make_shared<std::vector<OffsetPairs>>(static_cast<size_t>(kvol));
  out.coords.reserve(static_cast<size_t>(n_out));
  {
    int64_t o = 0;
    for (auto & [coord, list] : sites) {
      out.coords.push_back({coord[2], coord[1], coord[0]});  // back to (x,y,z)
      for (const auto & [in_row, kflat] : list) {
        auto & p = (*by_offset)[static_cast<size_t>(kflat)];
        p.in_rows.push_back(in_row);
        p.out_rows.push_back(o);
      }
      ++o;
    }
  }

  std::vector<Scalar> data(static_cast<size_t>(n_out * c_out));
  {
    for (int64_t o = 0; o < n_out; ++o) {
      std::memcpy(
        data.data() + o * c_out, bias.data().data(), static_cast<size_t>(c_out) * sizeof(Scalar));
    }
    std::vector<Scalar> wk(static_cast<size_t>(c_in * c_out));
    std::vector<Scalar> xg, yg;
    for (int64_t kf = 0; kf < kvol; ++kf) {
      const OffsetPairs & p = (*by_offset)[static_cast<size_t>(kf)];
      const int64_t n = static_cast<int64_t>(p.in_rows.size());
      if (n == 0) continue;
      // wk: (c_in x c_out) contiguous repack of the strided kernel slice.
      for (int64_t co = 0; co < c_out; ++co) {
        for (int64_t ci = 0; ci < c_in; ++ci) {
          wk[static_cast<size_t>(ci * c_out + co)] =
            weight.data()[static_cast<size_t>((co * c_in + ci) * kvol + kf)];
        }
      }
      xg.resize(static_cast<size_t>(n * c_in));
      yg.resize(static_cast<size_t>(n * c_out));
      for (int64_t r = 0; r < n; ++r) {
        std::memcpy(
          xg.data() + r * c_in, input.features.data().data() + p.in_rows[static_cast<size_t>(r)] * c_in,
          static_cast<size_t>(c_in) * sizeof(Scalar));
      }
      RowMatMap ygm(yg.data(), n, c_out);
      ygm.noalias() = ConstRowMatMap(xg.data(), n, c_in) * ConstRowMatMap(wk.data(), c_in, c_out);
      for (int64_t r = 0; r < n; ++r) {
        Scalar * dst = data.data() + p.out_rows[static_cast<size_t>(r)] * c_out;
        const Scalar * src = yg.data() + r * c_out;
        for (int64_t co = 0; co < c_out; ++co) dst[co] += src[co];
      }
    }
  }

  out.features = make_node(
    {n_out, c_out}, std::move(data), {input.features, weight, bias},
    [by_offset, c_in, c_out, kvol, n_out](TensorImpl & self) {
      TensorImpl & px = *self.parents[0];
      TensorImpl & pw = *self.parents[1];
      TensorImpl & pb = *self.parents[2];
      const bool need_x = px.requires_grad || bool(px.backward_fn);
      const bool need_w = pw.requires_grad || bool(pw.backward_fn);
      const bool need_b = pb.requires_grad || bool(pb.backward_fn);
      if (need_x) px.ensure_grad();
      if (need_w) pw.ensure_grad();
      if (need_b) pb.ensure_grad();
      if (need_b) {
        for (int64_t o = 0; o < n_out; ++o) {
          const Scalar * gout = self.grad.data() + o * c_out;
          for (int64_t co = 0; co < c_out; ++co) {
            pb.grad[static_cast<size_t>(co)] += gout[co];
          }
        }
      }
      std::vector<Scalar> wk(static_cast<size_t>(c_out * c_in));
      std::vector<Scalar> gwk(static_cast<size_t>(c_out * c_in));
      std::vector<Scalar> xg, gyg, gxg;
      for (int64_t kf = 0; kf < kvol; ++kf) {
        const OffsetPairs & p = (*by_offset)[static_cast<size_t>(kf)];
        const int64_t n = static_cast<int64_t>(p.in_rows.size());
        if (n == 0) continue;
        gyg.resize(static_cast<size_t>(n * c_out));
        for (int64_t r = 0; r < n; ++r) {
          std::memcpy(
            gyg.data() + r * c_out, self.grad.data() + p.out_rows[static_cast<size_t>(r)] * c_out,
            static_cast<size_t>(c_out) * sizeof(Scalar));
        }
        if (need_w) {
          xg.resize(static_cast<size_t>(n * c_in));
          for (int64_t r = 0; r < n; ++r) {
            std::memcpy(
              xg.data() + r * c_in, px.data.data() + p.in_rows[static_cast<size_t>(r)] * c_in,
              static_cast<size_t>(c_in) * sizeof(Scalar));
          }
          RowMatMap gwm(gwk.data(), c_out, c_in);
          gwm.noalias() =
            ConstRowMatMap(gyg.data(), n, c_out).transpose() * ConstRowMatMap(xg.data(), n, c_in);
          for (int64_t co = 0; co < c_out; ++co) {
            for (int64_t ci = 0; ci < c_in; ++ci) {
              pw.grad[static_cast<size_t>((co * c_in + ci) * kvol + kf)] +=
                gwk[static_cast<size_t>(co * c_in + ci)];
            }
          }
        }
        if (need_x) {
          for (int64_t co = 0; co < c_out; ++co) {
            for (int64_t ci = 0; ci < c_in; ++ci) {
              wk[static_cast<size_t>(co * c_in + ci)] =
                pw.data[static_cast<size_t>((co * c_in + ci) * kvol + kf)];
            }
          }
          gxg.resize(static_cast<size_t>(n * c_in));
          RowMatMap gxm(gxg.data(), n, c_in);
          gxm.noalias() =
            ConstRowMatMap(gyg.data(), n, c_out) * ConstRowMatMap(wk.data(), c_out, c_in);
          for (int64_t r = 0; r < n; ++r) {
            Scalar * dst = px.grad.data() + p.in_rows[static_cast<size_t>(r)] * c_in;
            const Scalar * src = gxg.data() + r * c_in;
            for (int64_t ci = 0; ci < c_in; ++ci) dst[ci] += src[ci];
          }
        }
      }
    });
  return out;
}

Tensor densify(const SparseVoxelTensor & input)
{
  const int64_t X = input.spec.extent[0], Y = input.spec.extent[1], Z = input.spec.extent[2];
  const int64_t c = input.channels;
  const int64_t cells = X * Y * Z;
  if (input.coords.empty()) {
    return Tensor::zeros({c, Z, Y, X});
  }
  const int64_t n = static_cast<int64_t>(input.coords.size());
  auto flat = std::make_shared<std::vector<int64_t>>();
  flat->reserve(static_cast<size_t>(n));
  for (const auto & co : input.coords) {
    if (co[0] < 0 || co[0] >= X || co[1] < 0 || co[1] >= Y || co[2] < 0 || co[2] >= Z) {
      throw std::out_of_range("densify: voxel coordinate outside grid");
    }
    flat->push_back((co[2] * Y + co[1]) * X + co[0]);
  }
  std::vector<Scalar> data(static_cast<size_t>(c * cells), Scalar(0));
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ch = 0; ch < c; ++ch) {
      data[static_cast<size_t>(ch * cells + (*flat)[static_cast<size_t>(i)])] =
        input.features.data()[static_cast<size_t>(i * c + ch)];
    }
  }
  return make_node(
    {c, Z, Y, X}, std::move(data), {input.features}, [flat, c, cells, n](TensorImpl & self) {
      TensorImpl & p = *self.parents[0];
      if (!p.requires_grad && !p.backward_fn) return;
      p.ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t ch = 0; ch < c; ++ch) {
          p.grad[static_cast<size_t>(i * c + ch)] +=
            self.grad[static_cast<size_t>(ch * cells + (*flat)[static_cast<size_t>(i)])];
        }
      }
    });
}

SparseConvLayer::SparseConvLayer(
  ParamStore & params, const std::string & name, int64_t in_ch, int64_t out_ch, int64_t kernel,
  std::array<int64_t, 3> stride_zyx, bool submanifold, Rng & rng)
: stride(stride_zyx), submanifold(submanifold)
{
  const int64_t fan_in = in_ch * kernel * kernel * kernel;
  weight = params.add(
    name + ".weight", uniform_param({out_ch, in_ch, kernel, kernel, kernel}, fan_in, rng));
  bias = params.add(name + ".bias", Tensor::zeros({out_ch}, /*requires_grad=*/true));
  padding = {kernel / 2, kernel / 2, kernel / 2};
}

SparseVoxelTensor SparseConvLayer::operator()(const SparseVoxelTensor & x) const
{
  return sparse_conv3d(x, weight, bias, stride, padding, submanifold);
}

}  // namespace fusiondet
