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

#include "fusiondet/encoders.hpp"

#include <stdexcept>

namespace fusiondet
{

ImageBackbone::ImageBackbone(
  ParamStore & params, const std::string & name, int64_t levels, int64_t channels, Rng & rng)
: channels_(channels)
{
  if (levels < 1) {
    throw std::invalid_argument("ImageBackbone: need at least one level");
  }
  int64_t in_ch = 3;
  for (int64_t l = 0; l < levels; ++l) {
    // Level 0 keeps full resolution; later levels halve H and W.
    const int64_t s = (l == 0) ? 1 : 2;
    layers_.emplace_back(
      params, name + ".level" + std::to_string(l), in_ch, channels, std::array<int64_t, 3>{1, 3, 3},
      std::array<int64_t, 3>{1, s, s}, std::array<int64_t, 3>{0, 1, 1}, rng);
    in_ch = channels;
  }
}

std::vector<FeatureLevel> ImageBackbone::forward(const Tensor & image) const
{
  if (image.shape().size() != 3 || image.shape()[0] != 3) {
    throw std::invalid_argument("ImageBackbone: expected [3 x H x W] image");
  }
  if (image.shape()[1] < 8 || image.shape()[2] < 8) {
    throw std::invalid_argument("ImageBackbone: image must be at least 8x8");
  }
  // Treat the image as a depth-1 volume so the 3D conv stack applies.
  Tensor x = reshape(image, {3, 1, image.shape()[1], image.shape()[2]});
  std::vector<FeatureLevel> out;
  int64_t stride = 1;
  for (const auto & layer : layers_) {
    x = relu(layer(x));
    stride *= (out.empty() ? 1 : 2);
    FeatureLevel level;
    level.map = reshape(x, {x.shape()[0], x.shape()[2], x.shape()[3]});
    level.stride = stride;
    out.push_back(level);
  }
  return out;
}

ImgEncoder::ImgEncoder(
  ParamStore & params, const std::string & name, int64_t channels, int64_t z_in, int64_t z_out,
  Rng & rng)
: z_in_(z_in), z_out_(z_out)
{
  int64_t z = z_in;
  int64_t l = 0;
  while (z > z_out) {
    if (z % 2 != 0) {
      throw std::invalid_argument(
        "ImgEncoder: z extent " + std::to_string(z_in) + " is not " + std::to_string(z_out) +
        " times a power of two");
    }
    stride_layers_.emplace_back(
      params, name + ".down" + std::to_string(l++), channels, channels,
      std::array<int64_t, 3>{3, 3, 3}, std::array<int64_t, 3>{2, 1, 1},
      std::array<int64_t, 3>{1, 1, 1}, rng);
    z /= 2;
  }
  if (z != z_out || stride_layers_.empty()) {
    throw std::invalid_argument("ImgEncoder: cannot reach target depth");
  }
  final_1x1_ = Conv3dLayer(
    params, name + ".final", channels, channels, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, rng);
}

ImgEncoder::Output ImgEncoder::forward(const AnchorVolume & volume) const
{
  const auto & s = volume.features.shape();
  if (s[1] != z_in_) {
    throw std::invalid_argument(
      "ImgEncoder: volume depth " + std::to_string(s[1]) + " != configured " +
      std::to_string(z_in_));
  }
  Tensor x = volume.features;
  Output out;
  for (size_t i = 0; i < stride_layers_.size(); ++i) {
    if (i + 1 == stride_layers_.size()) {
      out.penultimate = x;
    }
    const auto & in_shape = x.shape();
    x = relu(stride_layers_[i](x));
    // The z-only stride must leave x/y extents untouched.
    if (x.shape()[2] != in_shape[2] || x.shape()[3] != in_shape[3]) {
      throw std::logic_error("ImgEncoder: layer changed x/y extents");
    }
  }
  out.final = final_1x1_(x);
  return out;
}

SparseVoxelTensor sparse_relu(const SparseVoxelTensor & x)
{
  SparseVoxelTensor out = x;
  if (!x.coords.empty()) {
    out.features = relu(x.features);
  }
  return out;
}

LidarEncoder::LidarEncoder(
  ParamStore & params, const std::string & name, int64_t channels,
  std::array<int64_t, 3> grid_extent, std::array<int64_t, 3> target_extent, Rng & rng)
: grid_extent_(grid_extent), target_extent_(target_extent), channels_(channels)
{
  std::array<int64_t, 3> halvings{};  // per world axis x,y,z
  for (int a = 0; a < 3; ++a) {
    int64_t e = grid_extent[a];
    while (e > target_extent[a] && e % 2 == 0) {
      e /= 2;
      ++halvings[a];
    }
    if (e != target_extent[a]) {
      throw std::invalid_argument(
        "LidarEncoder: grid extent " + std::to_string(grid_extent[a]) +
        " unreachable from target " + std::to_string(target_extent[a]) +
        " by power-of-two strides");
    }
  }
  // x/y halvings first, z halvings last, so the penultimate level is
  // (2D x H x W) and lines up with the image branch.
  int64_t lx = halvings[0], ly = halvings[1], lz = halvings[2];
  int64_t idx = 0;
  while (lx > 0 || ly > 0 || lz > 0) {
    std::array<int64_t, 3> stride_zyx{1, 1, 1};
    if (lx > 0 || ly > 0) {
      if (ly > 0) {
        stride_zyx[1] = 2;
        --ly;
      }
      if (lx > 0) {
        stride_zyx[2] = 2;
        --lx;
      }
    } else {
      stride_zyx[0] = 2;
      --lz;
    }
    Block b;
    b.refine = SparseConvLayer(
      params, name + ".refine" + std::to_string(idx), channels, channels, 3, {1, 1, 1}, true, rng);
    b.down = SparseConvLayer(
      params, name + ".down" + std::to_string(idx), channels, channels, 3, stride_zyx, false, rng);
    blocks_.push_back(std::move(b));
    ++idx;
  }
  if (blocks_.empty()) {
    throw std::invalid_argument("LidarEncoder: grid already at target size");
  }
  final_1x1_ =
    SparseConvLayer(params, name + ".final", channels, channels, 1, {1, 1, 1}, true, rng);
}

LidarEncoder::Output LidarEncoder::forward(const SparseVoxelTensor & voxels) const
{
  for (int a = 0; a < 3; ++a) {
    if (voxels.spec.extent[a] != grid_extent_[a]) {
      throw std::invalid_argument("LidarEncoder: voxel grid does not match configured extents");
    }
  }
  SparseVoxelTensor x = voxels;
  Output out;
  for (size_t i = 0; i < blocks_.size(); ++i) {
    if (i + 1 == blocks_.size()) {
      out.penultimate = densify(x);
    }
    x = sparse_relu(blocks_[i].refine(x));
    x = sparse_relu(blocks_[i].down(x));
  }
  out.final = densify(final_1x1_(x));
  return out;
}

}  // namespace fusiondet
