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

#ifndef FUSIONDET_SPARSE_CONV_HPP_
#define FUSIONDET_SPARSE_CONV_HPP_

#include <array>

#include "fusiondet/voxelize.hpp"

namespace fusiondet
{

/// Sparse 3D convolution over occupied voxels. Coordinates are (x,y,z);
/// weights are [C_out x C_in x kz x ky x kx] and strides/paddings are given
/// in (z,y,x) order so a densified run through conv3d (layout C x Z x Y x X)
/// is bit-for-bit the same arithmetic.
///
/// submanifold=true keeps the active set (stride must be 1); otherwise the
/// output active set is every site whose receptive field touches an input.
SparseVoxelTensor sparse_conv3d(
  const SparseVoxelTensor & input, const Tensor & weight, const Tensor & bias,
  std::array<int64_t, 3> stride_zyx, std::array<int64_t, 3> padding_zyx, bool submanifold);

/// Scatters voxel features into a dense [C x Z x Y x X] tensor; unoccupied
/// cells are zero. Gradients gather back into the sparse feature rows.
Tensor densify(const SparseVoxelTensor & input);

struct SparseConvLayer
{
  SparseConvLayer() = default;
  SparseConvLayer(
    ParamStore & params, const std::string & name, int64_t in_ch, int64_t out_ch, int64_t kernel,
    std::array<int64_t, 3> stride_zyx, bool submanifold, Rng & rng);

  SparseVoxelTensor operator()(const SparseVoxelTensor & x) const;

  Tensor weight;
  Tensor bias;
  std::array<int64_t, 3> stride{1, 1, 1};
  std::array<int64_t, 3> padding{0, 0, 0};
  bool submanifold = true;
};

}  // namespace fusiondet

#endif  // FUSIONDET_SPARSE_CONV_HPP_
