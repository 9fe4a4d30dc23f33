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

#ifndef FUSIONDET_ENCODERS_HPP_
#define FUSIONDET_ENCODERS_HPP_

#include <string>
#include <vector>

#include "fusiondet/geometry.hpp"
#include "fusiondet/sparse_conv.hpp"

namespace fusiondet
{

/// Small trainable conv pyramid: L levels at strides 1, 2, 4, ... relative
/// to the input image, each `channels` wide. Level l spatial extents are
/// ceil(input / 2^l).
class ImageBackbone
{
public:
  ImageBackbone(
    ParamStore & params, const std::string & name, int64_t levels, int64_t channels, Rng & rng);

  /// image: [3 x H x W] with H, W >= 8.
  std::vector<FeatureLevel> forward(const Tensor & image) const;
  int64_t levels() const { return static_cast<int64_t>(layers_.size()); }
  int64_t channels() const { return channels_; }

private:
  std::vector<Conv3dLayer> layers_;
  int64_t channels_;
};

/// Img-Encoder: l conv layers with stride 2 along z only (each + ReLU),
/// then a final 1x1x1 conv. The x/y extents never change. Input volumes are
/// already in [C x Z x Y x X] layout, so the output is in LiDAR axis order.
class ImgEncoder
{
public:
  /// z_in must equal z_out * 2^l for some integer l >= 1.
  ImgEncoder(
    ParamStore & params, const std::string & name, int64_t channels, int64_t z_in, int64_t z_out,
    Rng & rng);

  struct Output
  {
    Tensor final;        // C x z_out x Y x X
    Tensor penultimate;  // C x 2*z_out x Y x X (pre final downsampling + 1x1)
  };
  Output forward(const AnchorVolume & volume) const;
  int64_t levels() const { return static_cast<int64_t>(stride_layers_.size()); }

private:
  std::vector<Conv3dLayer> stride_layers_;
  Conv3dLayer final_1x1_;
  int64_t z_in_, z_out_;
};

/// LiDAR-Encoder: SECOND-style stack of sparse convolutions — one
/// submanifold refinement before each strided downsampling layer. The x/y
/// halvings run first, then the z halvings, so the penultimate level sits at
/// (2D x H x W). A final submanifold 1x1 conv precedes densification.
class LidarEncoder
{
public:
  /// grid: the (padded) voxel grid spec; target: output extents (x,y,z).
  /// Every grid extent must equal target * 2^k for a non-negative integer k.
  LidarEncoder(
    ParamStore & params, const std::string & name, int64_t channels,
    std::array<int64_t, 3> grid_extent, std::array<int64_t, 3> target_extent, Rng & rng);

  struct Output
  {
    Tensor final;        // dense C x D x H x W
    Tensor penultimate;  // dense C x 2D x H x W
  };
  Output forward(const SparseVoxelTensor & voxels) const;

private:
  struct Block
  {
    SparseConvLayer refine;
    SparseConvLayer down;
  };
  std::vector<Block> blocks_;
  SparseConvLayer final_1x1_;
  std::array<int64_t, 3> grid_extent_, target_extent_;
  int64_t channels_;
};

/// Sparse ReLU helper: applies ReLU to the feature rows of a voxel tensor.
SparseVoxelTensor sparse_relu(const SparseVoxelTensor & x);

}  // namespace fusiondet

#endif  // FUSIONDET_ENCODERS_HPP_
