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

#include <cstdio>
#include <map>
#include <random>

#include <doctest.h>

#include "gradcheck.hpp"
#include "fusiondet/voxelize.hpp"

using namespace fusiondet;
using fusiondet::testing::gradcheck;

namespace
{

VolumeSpec small_spec()
{
  VolumeSpec spec;
  spec.range_min = {0, -4, -2};
  spec.range_max = {8, 4, 2};
  spec.extent = {8, 8, 4};
  spec.validate();
  return spec;
}

// Independent floor-division oracle using an ordered map keyed the same
// lexicographic way the production grouping is specified to be.
std::map<std::array<int64_t, 3>, std::vector<int64_t>> grouping_oracle(
  const PointCloud & cloud, const VolumeSpec & spec)
{
  std::map<std::array<int64_t, 3>, std::vector<int64_t>> groups;
  for (size_t i = 0; i < cloud.size(); ++i) {
    std::array<int64_t, 3> idx{};
    bool ok = true;
    const double p[3] = {cloud[i].x, cloud[i].y, cloud[i].z};
    for (int a = 0; a < 3; ++a) {
      const double f = (p[a] - spec.range_min[a]) / spec.cell(a);
      idx[a] = int64_t(std::floor(f));
      if (p[a] < spec.range_min[a] || p[a] >= spec.range_max[a]) ok = false;
    }
    if (ok) groups[idx].push_back(int64_t(i));
  }
  return groups;
}

}  // namespace

TEST_CASE("LidarPoint matches the 16-byte KITTI record")
{
  static_assert(sizeof(LidarPoint) == 16);
  CHECK(sizeof(LidarPoint) == 16);
}

TEST_CASE("velodyne files round-trip and hold 16 bytes per point")
{
  PointCloud cloud;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> dist(-40.0f, 40.0f);
  for (int i = 0; i < 137; ++i) {
    cloud.push_back({dist(rng), dist(rng), dist(rng), dist(rng)});
  }
  const std::string path = "test_voxelize_cloud.bin";
  write_velodyne(path, cloud);

  std::FILE * f = std::fopen(path.c_str(), "rb");
  REQUIRE(f != nullptr);
  std::fseek(f, 0, SEEK_END);
  CHECK(std::ftell(f) == long(16 * cloud.size()));
  std::fclose(f);

  const PointCloud back = read_velodyne(path);
  REQUIRE(back.size() == cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i) {
    CHECK(back[i].x == cloud[i].x);
    CHECK(back[i].y == cloud[i].y);
    CHECK(back[i].z == cloud[i].z);
    CHECK(back[i].reflectance == cloud[i].reflectance);
  }
  std::remove(path.c_str());
}

TEST_CASE("dynamic voxelization matches the floor-division oracle")
{
  const VolumeSpec spec = small_spec();
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<float> dx(-1.0f, 9.0f);  // includes out-of-range
  std::uniform_real_distribution<float> dy(-5.0f, 5.0f);
  std::uniform_real_distribution<float> dz(-3.0f, 3.0f);
  for (int trial = 0; trial < 50; ++trial) {
    PointCloud cloud;
    for (int i = 0; i < 200; ++i) cloud.push_back({dx(rng), dy(rng), dz(rng), 0.5f});
    const VoxelGrouping grouping = dynamic_voxelize(cloud, spec);
    const auto oracle = grouping_oracle(cloud, spec);
    REQUIRE(grouping.coords.size() == oracle.size());
    int64_t total = 0;
    size_t g = 0;
    for (const auto & kv : oracle) {
      CHECK(grouping.coords[g] == kv.first);
      CHECK(grouping.point_indices[g] == kv.second);
      total += int64_t(kv.second.size());
      ++g;
    }
    CHECK(grouping.in_range_points == total);
  }
}

TEST_CASE("voxel coordinates are sorted and unique")
{
  const VolumeSpec spec = small_spec();
  PointCloud cloud{{1, 1, 1, 0}, {1, 1, 1, 0}, {7, -3, -1, 0}, {0.1f, 0.1f, 0.1f, 0}};
  const VoxelGrouping grouping = dynamic_voxelize(cloud, spec);
  for (size_t i = 1; i < grouping.coords.size(); ++i) {
    CHECK(grouping.coords[i - 1] < grouping.coords[i]);
  }
}

TEST_CASE("segment_max_rows takes the group max and ties break low")
{
  Tensor x = Tensor::from_data(
    {4, 2}, {Scalar(1), Scalar(4), Scalar(3), Scalar(4), Scalar(0), Scalar(2), Scalar(5), Scalar(1)},
    true);
  const std::vector<std::vector<int64_t>> groups{{0, 1}, {2, 3}};
  Tensor out = segment_max_rows(x, groups);
  REQUIRE(out.shape() == std::vector<int64_t>{2, 2});
  CHECK(out.data()[0] == Scalar(3));
  CHECK(out.data()[1] == Scalar(4));
  CHECK(out.data()[2] == Scalar(5));
  CHECK(out.data()[3] == Scalar(2));

  // Tied max in column 1 of group 0: the gradient must go to row 0 only.
  sum(out).backward();
  REQUIRE(x.has_grad());
  CHECK(x.grad()[1] == Scalar(1));
  CHECK(x.grad()[3] == Scalar(0));
  CHECK(x.grad()[0] == Scalar(0));
  CHECK(x.grad()[2] == Scalar(1));
}

TEST_CASE("VFE output shape, determinism and gradients")
{
  const VolumeSpec spec = small_spec();
  PointCloud cloud;
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<float> dx(0.5f, 7.5f);
  std::uniform_real_distribution<float> dy(-3.5f, 3.5f);
  std::uniform_real_distribution<float> dz(-1.5f, 1.5f);
  for (int i = 0; i < 40; ++i) cloud.push_back({dx(rng), dy(rng), dz(rng), 0.25f});
  const VoxelGrouping grouping = dynamic_voxelize(cloud, spec);

  Rng prng(3);
  ParamStore params;
  VfeEncoder vfe(params, "vfe", 6, prng);
  const SparseVoxelTensor a = vfe.encode(cloud, grouping);
  const SparseVoxelTensor b = vfe.encode(cloud, grouping);
  REQUIRE(a.features.shape() == std::vector<int64_t>{int64_t(grouping.coords.size()), 6});
  CHECK(a.features.data() == b.features.data());
  CHECK(a.channels == 6);

  std::vector<std::vector<int64_t>> row_groups;
  Tensor feats = vfe_point_features(cloud, grouping, row_groups);
  REQUIRE(feats.shape()[1] == 7);
  Tensor leaf = Tensor::from_data(feats.shape(), feats.data(), true);
  std::vector<Tensor> leaves{leaf};
  for (const auto & kv : params.items()) leaves.push_back(kv.second);
  const double err = gradcheck(
    [&] {
      const SparseVoxelTensor enc = vfe.encode_rows(leaf, row_groups, grouping);
      return sum(mul(enc.features, enc.features));
    },
    leaves);
  CHECK(err < 1e-5);
}

TEST_CASE("empty and fully out-of-range clouds yield empty groupings")
{
  const VolumeSpec spec = small_spec();
  CHECK(dynamic_voxelize({}, spec).coords.empty());
  const VoxelGrouping g = dynamic_voxelize({{100, 0, 0, 0}}, spec);
  CHECK(g.coords.empty());
  CHECK(g.in_range_points == 0);
  Rng prng(3);
  ParamStore params;
  VfeEncoder vfe(params, "vfe", 4, prng);
  const SparseVoxelTensor enc = vfe.encode({}, g);
  CHECK_FALSE(enc.features.defined());
}
