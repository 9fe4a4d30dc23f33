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

#include "fusiondet/voxelize.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>

namespace fusiondet
{

VoxelGrouping dynamic_voxelize(const PointCloud & cloud, const VolumeSpec & spec)
{
  spec.validate();
  for (int a = 0; a < 3; ++a) {
    if (spec.cell(a) <= 0) {
      throw std::invalid_argument("dynamic_voxelize: non-positive voxel size");
    }
  }
  // std::map keeps voxels in lexicographic coordinate order, which fixes the
  // output ordering independent of point order.
  std::map<std::array<int64_t, 3>, std::vector<int64_t>> groups;
  int64_t in_range = 0;
  for (size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 p{double(cloud[i].x), double(cloud[i].y), double(cloud[i].z)};
    std::array<int64_t, 3> cell{};
    if (!spec.cell_of(p, cell)) continue;
    groups[cell].push_back(static_cast<int64_t>(i));
    ++in_range;
  }
  VoxelGrouping out;
  out.spec = spec;
  out.in_range_points = in_range;
  out.coords.reserve(groups.size());
  out.point_indices.reserve(groups.size());
  for (auto & [coord, members] : groups) {
    out.coords.push_back(coord);
    out.point_indices.push_back(std::move(members));
  }
  return out;
}

Tensor segment_max_rows(const Tensor & x, const std::vector<std::vector<int64_t>> & groups)
{
  if (x.shape().size() != 2) {
    throw std::invalid_argument("segment_max_rows: expected rank-2 input");
  }
  const int64_t width = x.shape()[1];
  const int64_t n_out = static_cast<int64_t>(groups.size());
  std::vector<Scalar> out(static_cast<size_t>(n_out * width));
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n_out * width));
  for (int64_t g = 0; g < n_out; ++g) {
    const auto & members = groups[static_cast<size_t>(g)];
    if (members.empty()) {
      throw std::invalid_argument("segment_max_rows: empty group");
    }
    for (int64_t c = 0; c < width; ++c) {
      int64_t best = members[0];
      Scalar best_v = x.data()[static_cast<size_t>(best * width + c)];
      for (size_t m = 1; m < members.size(); ++m) {
        const Scalar v = x.data()[static_cast<size_t>(members[m] * width + c)];
        if (v > best_v) {  // strict: ties keep the lowest index
          best_v = v;
          best = members[m];
        }
      }
      out[static_cast<size_t>(g * width + c)] = best_v;
      (*argmax)[static_cast<size_t>(g * width + c)] = best;
    }
  }
  return make_node({n_out, width}, std::move(out), {x}, [argmax, width](TensorImpl & self) {
    TensorImpl & p = *self.parents[0];
    if (!p.requires_grad && !p.backward_fn) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const int64_t row = (*argmax)[i];
      const int64_t c = static_cast<int64_t>(i) % width;
      p.grad[static_cast<size_t>(row * width + c)] += self.grad[i];
    }
  });
}

VfeEncoder::VfeEncoder(ParamStore & params, const std::string & name, int64_t channels, Rng & rng)
: linear_(params, name + ".linear", 7, channels, rng), channels_(channels)
{
}

SparseVoxelTensor VfeEncoder::encode(const PointCloud & cloud, const VoxelGrouping & grouping) const
{
  std::vector<std::vector<int64_t>> row_groups;
  const Tensor input = vfe_point_features(cloud, grouping, row_groups);
  return encode_rows(input, row_groups, grouping);
}

SparseVoxelTensor VfeEncoder::encode_rows(
  const Tensor & point_features, const std::vector<std::vector<int64_t>> & row_groups,
  const VoxelGrouping & grouping) const
{
  SparseVoxelTensor out;
  out.spec = grouping.spec;
  out.coords = grouping.coords;
  out.channels = channels_;
  if (grouping.coords.empty()) {
    return out;
  }
  Tensor mapped = relu(linear_(point_features));
  out.features = segment_max_rows(mapped, row_groups);
  return out;
}

Tensor vfe_point_features(
  const PointCloud & cloud, const VoxelGrouping & grouping,
  std::vector<std::vector<int64_t>> & row_groups)
{
  if (grouping.coords.empty()) {
    row_groups.clear();
    return Tensor();
  }
  // Flatten members in group order; groups then index into these rows.
  std::vector<Scalar> feats;
  row_groups.assign(grouping.coords.size(), {});
  int64_t row = 0;
  for (size_t g = 0; g < grouping.coords.size(); ++g) {
    const auto & members = grouping.point_indices[g];
    double cx = 0, cy = 0, cz = 0;
    for (int64_t idx : members) {
      cx += cloud[static_cast<size_t>(idx)].x;
      cy += cloud[static_cast<size_t>(idx)].y;
      cz += cloud[static_cast<size_t>(idx)].z;
    }
    const double inv = 1.0 / double(members.size());
    cx *= inv;
    cy *= inv;
    cz *= inv;
    for (int64_t idx : members) {
      const auto & p = cloud[static_cast<size_t>(idx)];
      feats.push_back(Scalar(p.x));
      feats.push_back(Scalar(p.y));
      feats.push_back(Scalar(p.z));
      feats.push_back(Scalar(p.reflectance));
      feats.push_back(Scalar(double(p.x) - cx));
      feats.push_back(Scalar(double(p.y) - cy));
      feats.push_back(Scalar(double(p.z) - cz));
      row_groups[g].push_back(row++);
    }
  }
  return Tensor::from_data({row, 7}, std::move(feats));
}

PointCloud read_velodyne(const std::string & path)
{
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) {
    throw std::runtime_error("cannot open velodyne file: " + path);
  }
  const std::streamsize bytes = is.tellg();
  if (bytes % 16 != 0) {
    throw std::runtime_error(
      "velodyne file length " + std::to_string(bytes) + " is not a multiple of 16: " + path);
  }
  is.seekg(0);
  PointCloud cloud(static_cast<size_t>(bytes / 16));
  static_assert(sizeof(LidarPoint) == 16);
  is.read(reinterpret_cast<char *>(cloud.data()), bytes);
  if (!is) {
    throw std::runtime_error("read failure on velodyne file: " + path);
  }
  return cloud;
}

void write_velodyne(const std::string & path, const PointCloud & cloud)
{
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw std::runtime_error("cannot open velodyne file for writing: " + path);
  }
  os.write(
    reinterpret_cast<const char *>(cloud.data()),
    static_cast<std::streamsize>(cloud.size() * sizeof(LidarPoint)));
  if (!os) {
    throw std::runtime_error("write failure on velodyne file: " + path);
  }
}

}  // namespace fusiondet
