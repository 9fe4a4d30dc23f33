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

#ifndef FUSIONDET_VOXELIZE_HPP_
#define FUSIONDET_VOXELIZE_HPP_

#include <array>
#include <string>
#include <vector>

#include "fusiondet/geometry.hpp"
#include "fusiondet/nn.hpp"

namespace fusiondet
{

struct LidarPoint
{
  float x = 0, y = 0, z = 0, reflectance = 0;
};

using PointCloud = std::vector<LidarPoint>;

/// Point membership per occupied voxel, ordered lexicographically by voxel
/// coordinate. No per-voxel cap and no dense buffer; out-of-range points are
/// dropped.
struct VoxelGrouping
{
  VolumeSpec spec;
  std::vector<std::array<int64_t, 3>> coords;       // unique, sorted (x,y,z)
  std::vector<std::vector<int64_t>> point_indices;  // parallel to coords
  int64_t in_range_points = 0;
};

VoxelGrouping dynamic_voxelize(const PointCloud & cloud, const VolumeSpec & spec);

/// Occupied voxel coordinates with one learned feature vector each.
struct SparseVoxelTensor
{
  VolumeSpec spec;
  std::vector<std::array<int64_t, 3>> coords;
  Tensor features;  // [N_voxels x C]; N may be 0 -> undefined tensor
  int64_t channels = 0;
};

/// Single-layer VFE: per point (x, y, z, r, x-cx, y-cy, z-cz) with the voxel
/// point centroid (cx,cy,cz), linear + ReLU to `channels`, then per-voxel
/// max-pool. Max-pool gradient goes to the lowest-index argmax member.
class VfeEncoder
{
public:
  VfeEncoder(ParamStore & params, const std::string & name, int64_t channels, Rng & rng);

  SparseVoxelTensor encode(const PointCloud & cloud, const VoxelGrouping & grouping) const;
  /// Same pipeline from a pre-built point-feature tensor (see
  /// vfe_point_features); lets callers hold the features as a graph leaf.
  SparseVoxelTensor encode_rows(
    const Tensor & point_features, const std::vector<std::vector<int64_t>> & row_groups,
    const VoxelGrouping & grouping) const;
  int64_t channels() const { return channels_; }

private:
  LinearLayer linear_;
  int64_t channels_;
};

/// Per-point VFE input rows [N x 7] (x, y, z, r, offsets from the voxel
/// point centroid) in group order; `row_groups` receives the member rows of
/// each voxel, parallel to grouping.coords.
Tensor vfe_point_features(
  const PointCloud & cloud, const VoxelGrouping & grouping,
  std::vector<std::vector<int64_t>> & row_groups);

/// KITTI velodyne .bin: little-endian f32 (x, y, z, reflectance) per point.
PointCloud read_velodyne(const std::string & path);
void write_velodyne(const std::string & path, const PointCloud & cloud);

/// Max over row groups: rows [begin_k, end_k) of x reduce to output row k.
/// Ties break toward the lowest row index.
Tensor segment_max_rows(const Tensor & x, const std::vector<std::vector<int64_t>> & groups);

}  // namespace fusiondet

#endif  // FUSIONDET_VOXELIZE_HPP_
