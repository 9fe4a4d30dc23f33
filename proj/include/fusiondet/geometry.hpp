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

#ifndef FUSIONDET_GEOMETRY_HPP_
#define FUSIONDET_GEOMETRY_HPP_

#include <array>
#include <string>
#include <vector>

#include "fusiondet/nn.hpp"
#include "fusiondet/tensor.hpp"

namespace fusiondet
{

struct Vec3
{
  double x = 0, y = 0, z = 0;
};

/// KITTI-style calibration: camera projection P2, rectification R0_rect and
/// the LiDAR-to-camera rigid transform.
struct Calibration
{
  std::array<double, 12> P{};   // 3x4, row-major
  std::array<double, 9> R0{};   // 3x3, row-major
  std::array<double, 12> Tr{};  // 3x4, row-major

  /// Throws if R0 is not orthonormal within 1e-6.
  void validate() const;

  static Calibration parse_kitti(const std::string & text);
  std::string to_kitti() const;

  /// Transforms a LiDAR-frame point into the rectified camera frame.
  Vec3 lidar_to_rect(const Vec3 & p) const;
  Vec3 rect_to_lidar(const Vec3 & p) const;
};

struct PixelProjection
{
  double u = 0, v = 0;
  double depth = 0;  // rectified-camera z
  bool valid = false;
};

std::vector<PixelProjection> project_lidar_to_image(
  const std::vector<Vec3> & points, const Calibration & calib);
PixelProjection project_point(const Vec3 & point, const Calibration & calib);

/// Metric grid over the detection range. Extents are cell counts per world
/// axis (x, y, z); the anchor center of cell (i,j,k) sits at
/// min + (index + 0.5) * cell.
struct VolumeSpec
{
  std::array<double, 3> range_min{};
  std::array<double, 3> range_max{};
  std::array<int64_t, 3> extent{};

  double cell(int axis) const { return (range_max[axis] - range_min[axis]) / double(extent[axis]); }
  Vec3 cell_center(int64_t ix, int64_t iy, int64_t iz) const;
  /// Floor-division cell of a point; false when out of range.
  bool cell_of(const Vec3 & p, std::array<int64_t, 3> & out) const;
  int64_t num_cells() const { return extent[0] * extent[1] * extent[2]; }
  void validate() const;
};

/// Anchor volume A_I: per-cell image features in [C x Z x Y x X] layout plus
/// the level-0 visibility mask. Masked-out cells hold exact zeros.
struct AnchorVolume
{
  VolumeSpec spec;
  Tensor features;             // C' x Z x Y x X
  std::vector<uint8_t> mask;   // Z*Y*X, flat index (z*Y + y)*X + x
};

struct FeatureLevel
{
  Tensor map;      // C x H x W
  int64_t stride;  // downsampling factor relative to the level-0 image
};

/// Ray-wise lifting of multi-level image features into the anchor volume:
/// every anchor samples its projected pixel at each level (nearest pixel),
/// level features are concatenated channel-wise, then reduced to out_ch by a
/// trainable 1x1x1 convolution.
class ImageLifter
{
public:
  ImageLifter(
    ParamStore & params, const std::string & name, std::vector<int64_t> level_channels,
    int64_t out_ch, Rng & rng);

  /// `image_size` is {width, height} of the level-0 image.
  AnchorVolume lift(
    const std::vector<FeatureLevel> & levels, const Calibration & calib, const VolumeSpec & spec,
    std::array<int64_t, 2> image_size) const;

  /// SLim variant: only the finest (first) level is sampled. Requires a
  /// lifter constructed with exactly one level so no parameter sits idle.
  AnchorVolume lift_single_level(
    const std::vector<FeatureLevel> & levels, const Calibration & calib, const VolumeSpec & spec,
    std::array<int64_t, 2> image_size) const;

  int64_t out_channels() const { return out_ch_; }

private:
  std::vector<int64_t> level_channels_;
  int64_t out_ch_;
  Conv3dLayer reduce_;         // over all configured levels
};

/// Gathers one pixel per anchor from a [C x H x W] map into [C x N]; anchors
/// with index < 0 produce zeros. Gradients scatter back to the map.
Tensor gather_pixels(const Tensor & map, const std::vector<int64_t> & flat_pixel, int64_t hw);

/// Zeroes all channels of flat cells whose mask entry is 0.
Tensor apply_cell_mask(const Tensor & volume, const std::vector<uint8_t> & mask);

}  // namespace fusiondet

#endif  // FUSIONDET_GEOMETRY_HPP_
