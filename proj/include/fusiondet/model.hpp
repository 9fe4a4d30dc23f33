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

#ifndef FUSIONDET_MODEL_HPP_
#define FUSIONDET_MODEL_HPP_

#include <optional>
#include <string>

#include "fusiondet/dataio.hpp"
#include "fusiondet/encoders.hpp"
#include "fusiondet/fusion.hpp"
#include "fusiondet/head.hpp"
#include "fusiondet/voxelize.hpp"

namespace fusiondet
{

/// Fully resolved run configuration. Presets fix the detection range and
/// volume shapes; every field can still be overridden through the key-value
/// config format (`section.key = value`).
struct RunConfig
{
  std::string preset = "tiny";
  // Geometry. anchor_spec is the image anchor volume (x, y, z cell counts);
  // lidar_spec the voxel grid. Both cover the same metric range and the
  // lidar extents are power-of-two multiples of the fused map.
  VolumeSpec anchor_spec;
  VolumeSpec lidar_spec;
  int64_t fused_z = 5;
  // Channel widths.
  int64_t image_levels = 3;
  int64_t image_channels = 8;
  int64_t img_branch_channels = 16;  // C'
  int64_t lidar_channels = 16;       // C
  int64_t fused_channels = 32;       // C' + C
  // Ablation axes.
  int mmfd = 1;
  int mmfl = 1;
  bool multi_level_image = true;  // MLim vs SLim
  bool use_attention = true;      // false: simple concatenation
  bool use_decoder = true;        // joint-feature-generation conv
  bool lidar_only = false;        // image branch removed entirely
  // Optimization.
  double lr = 2e-4;
  int64_t epochs = 40;
  uint64_t seed = 0;
  // Inference.
  double score_thresh = 0.05;
  double nms_iou = 0.1;
  int64_t max_detections = 50;

  SyntheticConfig synth;

  static RunConfig make_preset(const std::string & name);
  void validate() const;

  /// Flat `section.key = value` text; parse applies `preset` first so later
  /// keys override preset defaults.
  std::string to_text() const;
  void apply_kv(const std::string & key, const std::string & value);
  static RunConfig from_text(const std::string & text);
};

/// End-to-end detector: image pyramid + ray-wise lifting + img-encoder,
/// dynamic voxelization + VFE + sparse lidar encoder, gated fusion with
/// decoder, anchor head.
class Model
{
public:
  Model(const RunConfig & config, Rng & rng);

  HeadOutput forward(const Tensor & image, const PointCloud & cloud, const Calibration & calib) const;
  HeadOutput forward_scene(const Scene & scene) const;

  ParamStore & params() { return params_; }
  const ParamStore & params() const { return params_; }
  const AnchorSet & anchors() const { return anchors_; }
  const RunConfig & config() const { return config_; }

private:
  RunConfig config_;
  ParamStore params_;
  std::optional<ImageBackbone> backbone_;
  std::optional<ImageLifter> lifter_;
  std::optional<ImgEncoder> img_encoder_;
  VfeEncoder vfe_;
  LidarEncoder lidar_encoder_;
  FusionModule fusion_;
  DetectionHead head_;
  AnchorSet anchors_;
};

}  // namespace fusiondet

#endif  // FUSIONDET_MODEL_HPP_
