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

#ifndef FUSIONDET_DATAIO_HPP_
#define FUSIONDET_DATAIO_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fusiondet/box3d.hpp"
#include "fusiondet/eval.hpp"
#include "fusiondet/geometry.hpp"
#include "fusiondet/tensor.hpp"
#include "fusiondet/voxelize.hpp"

namespace fusiondet
{

/// Binary P6 RGB image, 8 bits per channel, row-major interleaved.
struct Image
{
  int64_t width = 0;
  int64_t height = 0;
  std::vector<uint8_t> rgb;  // height * width * 3
};

Image read_ppm(const std::string & path);
void write_ppm(const std::string & path, const Image & image);

/// [3 x H x W] float tensor with values in [0, 1].
Tensor image_to_tensor(const Image & image);

/// One KITTI label line. The 3D box is kept in the LiDAR frame (gravity
/// center); the file representation is the camera-frame bottom center with
/// rotation ry, converted through the calibration on read/write.
struct ObjectLabel
{
  std::string type = "Car";
  double truncation = 0;
  int occlusion = 0;
  double alpha = 0;
  std::array<double, 4> bbox{};  // left, top, right, bottom (px)
  Box3D box;
  bool has_score = false;
  double score = 0;
};

ObjectLabel parse_kitti_label_line(const std::string & line, const Calibration & calib);
std::string format_kitti_label_line(const ObjectLabel & label, const Calibration & calib);

std::vector<ObjectLabel> read_kitti_label(const std::string & path, const Calibration & calib);
void write_kitti_label(
  const std::string & path, const std::vector<ObjectLabel> & labels, const Calibration & calib);
/// Same format with the score column appended to every line.
void write_detections(
  const std::string & path, const std::vector<ObjectLabel> & labels, const Calibration & calib);

GtAnnotation to_annotation(const ObjectLabel & label);

struct Scene
{
  Image image;
  PointCloud cloud;
  Calibration calib;
  std::vector<ObjectLabel> labels;
};

struct SyntheticConfig
{
  uint64_t seed = 0;
  int64_t scene_count = 1;
  int64_t min_boxes = 2;
  int64_t max_boxes = 6;
  std::array<double, 2> length_range{3.2, 4.6};
  std::array<double, 2> width_range{1.5, 1.8};
  std::array<double, 2> height_range{1.4, 1.7};
  int64_t lidar_channels = 32;
  int64_t azimuth_steps = 512;
  double dropout = 0.0;  // per-object probability of losing every LiDAR return
  int64_t image_width = 480;
  int64_t image_height = 160;
  // Kept near enough that every object clears the 25-px KITTI height
  // cutoff under the canonical camera; farther cars would be unscoreable.
  std::array<double, 2> forward_range{8.0, 24.0};
  double lateral_limit = 20.0;
  double ground_z = -1.73;

  void validate() const;
};

/// Camera looking down the LiDAR +x axis: x_cam = -y, y_cam = -z, z_cam = x,
/// focal length 0.866*W (60 degree horizontal FOV), principal point centered.
Calibration canonical_calibration(int64_t width, int64_t height);

/// Deterministic per-index generation; (seed, index) fully determines the
/// scene bit-for-bit.
Scene generate_scene(const SyntheticConfig & config, int64_t index);

struct FramePaths
{
  std::string image;
  std::string velodyne;
  std::string calib;
  std::string label;  // may be empty (no labels loaded)
};

/// Paths for frame `index` under the KITTI-style directory layout
/// image_2/ velodyne/ calib/ label_2/ with %06d numbering.
FramePaths frame_paths(const std::string & root, int64_t index);

Scene load_kitti_frame(const FramePaths & paths);
void write_scene(const std::string & root, int64_t index, const Scene & scene);

/// Generates config.scene_count scenes under root (creates the directory
/// layout) and returns the number written.
int64_t generate_dataset(const SyntheticConfig & config, const std::string & root);

/// Number of frames present (consecutive %06d velodyne files from 0).
int64_t count_frames(const std::string & root);

}  // namespace fusiondet

#endif  // FUSIONDET_DATAIO_HPP_
