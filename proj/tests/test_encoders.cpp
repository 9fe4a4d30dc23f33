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

#include <random>
#include <set>

#include <doctest.h>

#include "fusiondet/encoders.hpp"

using namespace fusiondet;

namespace
{

Tensor random_tensor(std::vector<int64_t> shape, std::mt19937_64 & rng)
{
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<Scalar> data(static_cast<size_t>(shape_numel(shape)));
  for (Scalar & v : data) v = Scalar(dist(rng));
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace

TEST_CASE("image backbone level extents follow ceil-halving")
{
  Rng rng(1);
  ParamStore params;
  ImageBackbone backbone(params, "bb", 3, 6, rng);
  std::mt19937_64 data_rng(2);
  const std::vector<FeatureLevel> levels = backbone.forward(random_tensor({3, 34, 50}, data_rng));
  REQUIRE(levels.size() == 3);
  CHECK(levels[0].stride == 1);
  CHECK(levels[1].stride == 2);
  CHECK(levels[2].stride == 4);
  CHECK(levels[0].map.shape() == std::vector<int64_t>{6, 34, 50});
  CHECK(levels[1].map.shape() == std::vector<int64_t>{6, 17, 25});
  CHECK(levels[2].map.shape() == std::vector<int64_t>{6, 9, 13});
}

TEST_CASE("img-encoder halves z only and exposes the penultimate volume")
{
  Rng rng(3);
  ParamStore params;
  ImgEncoder enc(params, "img", 6, 20, 5, rng);
  CHECK(enc.levels() == 2);

  AnchorVolume volume;
  volume.spec.range_min = {0, -4, -3};
  volume.spec.range_max = {8, 4, 1};
  volume.spec.extent = {8, 8, 20};
  std::mt19937_64 data_rng(4);
  volume.features = random_tensor({6, 20, 8, 8}, data_rng);
  volume.mask.assign(size_t(20 * 8 * 8), 1);

  const ImgEncoder::Output out = enc.forward(volume);
  CHECK(out.final.shape() == std::vector<int64_t>{6, 5, 8, 8});
  CHECK(out.penultimate.shape() == std::vector<int64_t>{6, 10, 8, 8});
}

TEST_CASE("img-encoder rejects non-power-of-two z ratios")
{
  Rng rng(5);
  ParamStore params;
  CHECK_THROWS(ImgEncoder(params, "bad", 4, 20, 7, rng));
  CHECK_THROWS(ImgEncoder(params, "bad2", 4, 12, 5, rng));
}

TEST_CASE("lidar encoder reaches the target extents with a 2D penultimate")
{
  Rng rng(7);
  ParamStore params;
  // Grid (x, y, z) = (16, 16, 8) -> target (4, 4, 2): two x/y halvings
  // first, then the z halvings down to 2.
  LidarEncoder enc(params, "lidar", 5, {16, 16, 8}, {4, 4, 2}, rng);

  SparseVoxelTensor voxels;
  voxels.spec.range_min = {0, -8, -2};
  voxels.spec.range_max = {16, 8, 2};
  voxels.spec.extent = {16, 16, 8};
  voxels.channels = 5;
  std::mt19937_64 data_rng(8);
  std::uniform_int_distribution<int64_t> cx(0, 15), cz(0, 7);
  std::set<std::array<int64_t, 3>> sites;
  while (sites.size() < 40) sites.insert({cx(data_rng), cx(data_rng), cz(data_rng)});
  voxels.coords.assign(sites.begin(), sites.end());
  voxels.features = random_tensor({int64_t(sites.size()), 5}, data_rng);

  const LidarEncoder::Output out = enc.forward(voxels);
  CHECK(out.final.shape() == std::vector<int64_t>{5, 2, 4, 4});
  CHECK(out.penultimate.shape() == std::vector<int64_t>{5, 4, 4, 4});
}

TEST_CASE("lidar encoder rejects extents that do not halve to the target")
{
  Rng rng(9);
  ParamStore params;
  CHECK_THROWS(LidarEncoder(params, "bad", 4, {12, 16, 8}, {4, 4, 2}, rng));
  CHECK_THROWS(LidarEncoder(params, "bad2", 4, {16, 16, 8}, {5, 4, 2}, rng));
}

TEST_CASE("sparse relu clamps feature rows")
{
  SparseVoxelTensor x;
  x.spec.range_min = {0, 0, 0};
  x.spec.range_max = {4, 4, 4};
  x.spec.extent = {4, 4, 4};
  x.channels = 2;
  x.coords = {{0, 0, 0}, {1, 1, 1}};
  x.features = Tensor::from_data({2, 2}, {Scalar(-1), Scalar(2), Scalar(0.5), Scalar(-3)});
  const SparseVoxelTensor y = sparse_relu(x);
  CHECK(y.features.data() == std::vector<Scalar>{0, 2, Scalar(0.5), 0});
  CHECK(y.coords == x.coords);
}
