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
#include <filesystem>
#include <random>

#include <doctest.h>

#include "fusiondet/dataio.hpp"

using namespace fusiondet;

TEST_CASE("PPM images round-trip byte for byte")
{
  Image img;
  img.width = 31;
  img.height = 17;
  img.rgb.resize(size_t(31 * 17 * 3));
  std::mt19937_64 rng(3);
  for (uint8_t & v : img.rgb) v = uint8_t(rng());
  const std::string path = "test_dataio_img.ppm";
  write_ppm(path, img);
  const Image back = read_ppm(path);
  CHECK(back.width == img.width);
  CHECK(back.height == img.height);
  CHECK(back.rgb == img.rgb);
  std::remove(path.c_str());
}

TEST_CASE("image_to_tensor is channel-planar and scaled to [0,1]")
{
  Image img;
  img.width = 2;
  img.height = 1;
  img.rgb = {255, 0, 51, 0, 255, 102};
  const Tensor t = image_to_tensor(img);
  REQUIRE(t.shape() == std::vector<int64_t>{3, 1, 2});
  CHECK(t.data()[0] == doctest::Approx(1.0));       // R of pixel 0
  CHECK(t.data()[1] == doctest::Approx(0.0));       // R of pixel 1
  CHECK(t.data()[2] == doctest::Approx(0.0));       // G of pixel 0
  CHECK(t.data()[3] == doctest::Approx(1.0));       // G of pixel 1
  CHECK(t.data()[4] == doctest::Approx(51.0 / 255));
  CHECK(t.data()[5] == doctest::Approx(102.0 / 255));
}

TEST_CASE("a label line formats to the hand-derived KITTI record")
{
  const Calibration calib = canonical_calibration(480, 160);
  ObjectLabel label;
  label.type = "Car";
  label.truncation = 0;
  label.occlusion = 0;
  label.alpha = 1.5;
  label.bbox = {100, 50, 200, 120};
  label.box = Box3D(10, 2, -0.95, 3.9, 1.6, 1.56, 0.3);
  // Bottom center (10, 2, -1.73) -> camera (-2, 1.73, 10); ry = -0.3 - pi/2.
  CHECK(
    format_kitti_label_line(label, calib) ==
    "Car 0.00 0 1.50 100.00 50.00 200.00 120.00 1.56 1.60 3.90 -2.00 1.73 10.00 -1.87");
  label.has_score = true;
  label.score = 0.875;
  const std::string line = format_kitti_label_line(label, calib);
  CHECK(line.substr(line.size() - 8) == "0.875000");
}

TEST_CASE("label lines round-trip bit-identically through parse and format")
{
  const Calibration calib = canonical_calibration(480, 160);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(8.0, 50.0);
  std::uniform_real_distribution<double> lat(-15.0, 15.0);
  std::uniform_real_distribution<double> yaw(-M_PI, M_PI);
  for (int i = 0; i < 50; ++i) {
    ObjectLabel label;
    label.truncation = 0.1 * (i % 5);
    label.occlusion = i % 3;
    label.alpha = yaw(rng);
    label.bbox = {10.0 + i, 20.0, 100.0 + i, 90.0};
    label.box = Box3D(pos(rng), lat(rng), -1.0, 4.1, 1.65, 1.5, yaw(rng));
    label.has_score = i % 2 == 0;
    label.score = 0.5 + 0.001 * i;
    const std::string line = format_kitti_label_line(label, calib);
    const ObjectLabel parsed = parse_kitti_label_line(line, calib);
    // The %.2f quantization is absorbed on the first write; a second pass
    // must reproduce the same bytes.
    CHECK(format_kitti_label_line(parsed, calib) == line);
  }
}

TEST_CASE("to_annotation carries the difficulty-relevant fields")
{
  ObjectLabel label;
  label.truncation = 0.2;
  label.occlusion = 1;
  label.bbox = {100, 40, 180, 95};
  label.box = Box3D(12, 1, -1, 4, 1.6, 1.5, 0.1);
  const GtAnnotation gt = to_annotation(label);
  CHECK(gt.truncation == doctest::Approx(0.2));
  CHECK(gt.occlusion == 1);
  CHECK(gt.bbox_height_px == doctest::Approx(55.0));
  CHECK(gt.box.x == doctest::Approx(12.0));
}

TEST_CASE("scene generation is deterministic in (seed, index)")
{
  SyntheticConfig cfg;
  cfg.seed = 77;
  const Scene a = generate_scene(cfg, 5);
  const Scene b = generate_scene(cfg, 5);
  CHECK(a.image.rgb == b.image.rgb);
  REQUIRE(a.cloud.size() == b.cloud.size());
  for (size_t i = 0; i < a.cloud.size(); ++i) {
    CHECK(a.cloud[i].x == b.cloud[i].x);
    CHECK(a.cloud[i].reflectance == b.cloud[i].reflectance);
  }
  REQUIRE(a.labels.size() == b.labels.size());

  const Scene c = generate_scene(cfg, 6);
  CHECK(a.image.rgb != c.image.rgb);
}

TEST_CASE("generated scenes place visible labeled objects with returns")
{
  SyntheticConfig cfg;
  cfg.seed = 13;
  const Scene scene = generate_scene(cfg, 0);
  REQUIRE(!scene.labels.empty());
  CHECK(scene.labels.size() >= size_t(cfg.min_boxes));
  CHECK(scene.labels.size() <= size_t(cfg.max_boxes));
  CHECK(scene.cloud.size() > 1000);  // ground plus objects

  for (const ObjectLabel & label : scene.labels) {
    CHECK(label.box.x >= cfg.forward_range[0]);
    CHECK(label.box.x <= cfg.forward_range[1]);
    CHECK(std::abs(label.box.y) <= cfg.lateral_limit);
    CHECK(label.box.valid_sizes());
    // With dropout 0 every object keeps LiDAR returns near its center.
    int64_t hits = 0;
    for (const LidarPoint & p : scene.cloud) {
      const double dx = double(p.x) - label.box.x;
      const double dy = double(p.y) - label.box.y;
      if (dx * dx + dy * dy < 9.0 && p.z > -1.7) ++hits;
    }
    CHECK(hits > 0);
  }
}

TEST_CASE("per-object dropout removes returns but keeps the label")
{
  SyntheticConfig cfg;
  cfg.seed = 13;
  cfg.dropout = 1.0;
  const Scene scene = generate_scene(cfg, 0);
  REQUIRE(!scene.labels.empty());
  for (const ObjectLabel & label : scene.labels) {
    int64_t hits = 0;
    for (const LidarPoint & p : scene.cloud) {
      const double dx = double(p.x) - label.box.x;
      const double dy = double(p.y) - label.box.y;
      if (dx * dx + dy * dy < 2.0 && p.z > -1.6) ++hits;
    }
    CHECK(hits == 0);
  }
}

TEST_CASE("datasets round-trip through the KITTI directory layout")
{
  namespace fs = std::filesystem;
  const std::string root = "test_dataio_set";
  fs::remove_all(root);
  SyntheticConfig cfg;
  cfg.seed = 5;
  cfg.scene_count = 3;
  CHECK(generate_dataset(cfg, root) == 3);
  CHECK(count_frames(root) == 3);

  const Scene orig = generate_scene(cfg, 1);
  const Scene back = load_kitti_frame(frame_paths(root, 1));
  CHECK(back.image.rgb == orig.image.rgb);
  REQUIRE(back.cloud.size() == orig.cloud.size());
  for (size_t i = 0; i < orig.cloud.size(); ++i) {
    CHECK(back.cloud[i].x == orig.cloud[i].x);
    CHECK(back.cloud[i].z == orig.cloud[i].z);
  }
  CHECK(back.calib.to_kitti() == orig.calib.to_kitti());
  REQUIRE(back.labels.size() == orig.labels.size());
  // Label boxes agree to the %.2f file quantum.
  for (size_t i = 0; i < back.labels.size(); ++i) {
    CHECK(std::abs(back.labels[i].box.x - orig.labels[i].box.x) < 0.011);
    CHECK(std::abs(back.labels[i].box.yaw - orig.labels[i].box.yaw) < 0.011);
  }
  fs::remove_all(root);
}
