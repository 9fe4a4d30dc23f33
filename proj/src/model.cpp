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

#include "fusiondet/model.hpp"

#include <sstream>
#include <stdexcept>

#include "fusiondet/ops.hpp"

namespace fusiondet
{

namespace
{

VolumeSpec make_spec(
  std::array<double, 3> lo, std::array<double, 3> hi, std::array<int64_t, 3> extent)
{
  VolumeSpec s;
  s.range_min = lo;
  s.range_max = hi;
  s.extent = extent;
  return s;
}

bool parse_bool(const std::string & v)
{
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: expected bool, got '" + v + "'");
}

std::string trim(const std::string & s)
{
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig RunConfig::make_preset(const std::string & name)
{
  RunConfig c;
  c.preset = name;
  if (name == "tiny") {
    // Fused map cell 1.6 m = 8 x 0.2 m voxels; 42 cells per side.
    c.anchor_spec = make_spec({0, -33.6, -3}, {67.2, 33.6, 1}, {42, 42, 20});
    c.lidar_spec = make_spec({0, -33.6, -3}, {67.2, 33.6, 1}, {336, 336, 40});
    c.image_levels = 3;
    c.image_channels = 8;
    c.img_branch_channels = 8;
    c.lidar_channels = 8;
    c.fused_channels = 16;
    // Small models on small synthetic splits need a hotter schedule than the
    // base recipe.
    c.lr = 1e-3;
  } else if (name == "small") {
    // Cell 0.8 m = 8 x 0.1 m voxels; 86 cells per side.
    c.anchor_spec = make_spec({0, -34.4, -3}, {68.8, 34.4, 1}, {86, 86, 20});
    c.lidar_spec = make_spec({0, -34.4, -3}, {68.8, 34.4, 1}, {688, 688, 40});
    c.image_levels = 3;
    c.image_channels = 8;
    c.img_branch_channels = 24;
    c.lidar_channels = 24;
    c.fused_channels = 48;
    c.lr = 1e-3;
  } else if (name == "base") {
    // Cell 0.4 m = 8 x 0.05 m voxels; 176 x 200 map, range 70.4 x 80 m.
    c.anchor_spec = make_spec({0, -40, -3}, {70.4, 40, 1}, {176, 200, 20});
    c.lidar_spec = make_spec({0, -40, -3}, {70.4, 40, 1}, {1408, 1600, 40});
    c.image_levels = 3;
    c.image_channels = 32;
    c.img_branch_channels = 128;
    c.lidar_channels = 128;
    c.fused_channels = 256;
  } else {
    throw std::invalid_argument("unknown preset '" + name + "'");
  }
  c.validate();
  return c;
}

void RunConfig::validate() const
{
  anchor_spec.validate();
  lidar_spec.validate();
  if (fused_channels != img_branch_channels + lidar_channels) {
    throw std::invalid_argument("RunConfig: fused_channels must equal C' + C");
  }
  if (preset == "base" && (img_branch_channels != 128 || lidar_channels != 128 || fused_channels != 256)) {
    throw std::invalid_argument("RunConfig: base preset fixes channels to 128 + 128 -> 256");
  }
  if (anchor_spec.extent[2] % fused_z != 0) {
    throw std::invalid_argument("RunConfig: image z cells must be divisible by fused_z");
  }
  for (int a = 0; a < 3; ++a) {
    const int64_t target = a == 2 ? fused_z : anchor_spec.extent[a];
    int64_t e = lidar_spec.extent[a];
    while (e > target && e % 2 == 0) e /= 2;
    if (e != target) {
      throw std::invalid_argument("RunConfig: lidar grid must reach the fused map by halvings");
    }
  }
  if (image_levels < 1 || epochs < 0 || lr <= 0) {
    throw std::invalid_argument("RunConfig: invalid training settings");
  }
  if (mmfd == 2 && !use_attention) {
    throw std::invalid_argument("RunConfig: mmfd=2 requires attention");
  }
  synth.validate();
}

std::string RunConfig::to_text() const
{
  std::ostringstream o;
  o << "preset = " << preset << "\n";
  o << "model.image_levels = " << image_levels << "\n";
  o << "model.image_channels = " << image_channels << "\n";
  o << "model.img_branch_channels = " << img_branch_channels << "\n";
  o << "model.lidar_channels = " << lidar_channels << "\n";
  o << "model.fused_channels = " << fused_channels << "\n";
  o << "model.multi_level_image = " << (multi_level_image ? "true" : "false") << "\n";
  o << "model.lidar_only = " << (lidar_only ? "true" : "false") << "\n";
  o << "fusion.mmfd = " << mmfd << "\n";
  o << "fusion.mmfl = " << mmfl << "\n";
  o << "fusion.attention = " << (use_attention ? "true" : "false") << "\n";
  o << "fusion.decoder = " << (use_decoder ? "true" : "false") << "\n";
  o << "train.lr = " << lr << "\n";
  o << "train.epochs = " << epochs << "\n";
  o << "train.seed = " << seed << "\n";
  o << "infer.score_thresh = " << score_thresh << "\n";
  o << "infer.nms_iou = " << nms_iou << "\n";
  o << "infer.max_detections = " << max_detections << "\n";
  o << "synth.count = " << synth.scene_count << "\n";
  o << "synth.seed = " << synth.seed << "\n";
  o << "synth.min_boxes = " << synth.min_boxes << "\n";
  o << "synth.max_boxes = " << synth.max_boxes << "\n";
  o << "synth.dropout = " << synth.dropout << "\n";
  return o.str();
}

void RunConfig::apply_kv(const std::string & key, const std::string & value)
{
  if (key == "preset") {
    *this = make_preset(value);
  } else if (key == "model.image_levels") {
    image_levels = std::stoll(value);
  } else if (key == "model.image_channels") {
    image_channels = std::stoll(value);
  } else if (key == "model.img_branch_channels") {
    img_branch_channels = std::stoll(value);
  } else if (key == "model.lidar_channels") {
    lidar_channels = std::stoll(value);
  } else if (key == "model.fused_channels") {
    fused_channels = std::stoll(value);
  } else if (key == "model.multi_level_image") {
    multi_level_image = parse_bool(value);
  } else if (key == "model.lidar_only") {
    lidar_only = parse_bool(value);
  } else if (key == "fusion.mmfd") {
    mmfd = std::stoi(value);
  } else if (key == "fusion.mmfl") {
    mmfl = std::stoi(value);
  } else if (key == "fusion.attention") {
    use_attention = parse_bool(value);
  } else if (key == "fusion.decoder") {
    use_decoder = parse_bool(value);
  } else if (key == "train.lr") {
    lr = std::stod(value);
  } else if (key == "train.epochs") {
    epochs = std::stoll(value);
  } else if (key == "train.seed") {
    seed = std::stoull(value);
  } else if (key == "infer.score_thresh") {
    score_thresh = std::stod(value);
  } else if (key == "infer.nms_iou") {
    nms_iou = std::stod(value);
  } else if (key == "infer.max_detections") {
    max_detections = std::stoll(value);
  } else if (key == "synth.count") {
    synth.scene_count = std::stoll(value);
  } else if (key == "synth.seed") {
    synth.seed = std::stoull(value);
  } else if (key == "synth.min_boxes") {
    synth.min_boxes = std::stoll(value);
  } else if (key == "synth.max_boxes") {
    synth.max_boxes = std::stoll(value);
  } else if (key == "synth.dropout") {
    synth.dropout = std::stod(value);
  } else {
    throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

RunConfig RunConfig::from_text(const std::string & text)
{
  std::istringstream in(text);
  std::string line;
  std::vector<std::pair<std::string, std::string>> kvs;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(
        "config: line " + std::to_string(lineno) + " is not 'key = value'");
    }
    kvs.emplace_back(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
  }
  // Preset resets everything, so it must win the ordering regardless of
  // where it sits in the file.
  RunConfig cfg = make_preset("tiny");
  for (const auto & [k, v] : kvs) {
    if (k == "preset") cfg = make_preset(v);
  }
  for (const auto & [k, v] : kvs) {
    if (k != "preset") cfg.apply_kv(k, v);
  }
  cfg.validate();
  return cfg;
}

Model::Model(const RunConfig & config, Rng & rng)
: config_((config.validate(), config)),
  vfe_(params_, "vfe", config.lidar_channels, rng),
  lidar_encoder_(
    params_, "lidar_enc", config.lidar_channels, config.lidar_spec.extent,
    {config.anchor_spec.extent[0], config.anchor_spec.extent[1], config.fused_z}, rng),
  fusion_(
    params_, "fusion",
    FusionConfig{
      config.img_branch_channels, config.lidar_channels, config.fused_channels, config.mmfd,
      config.mmfl, config.use_attention, config.use_decoder},
    config.fused_z, rng),
  head_(params_, "head", config.fused_channels, rng)
{
  if (!config_.lidar_only) {
    // SLim keeps only the finest pyramid level; deeper backbone stages would
    // never receive gradients.
    const int64_t levels = config_.multi_level_image ? config_.image_levels : 1;
    backbone_.emplace(params_, "backbone", levels, config_.image_channels, rng);
    std::vector<int64_t> level_channels(size_t(levels), config_.image_channels);
    lifter_.emplace(params_, "lifter", level_channels, config_.img_branch_channels, rng);
    img_encoder_.emplace(
      params_, "img_enc", config_.img_branch_channels, config_.anchor_spec.extent[2],
      config_.fused_z, rng);
  }
  VolumeSpec bev = config_.anchor_spec;
  bev.extent[2] = config_.fused_z;
  anchors_ = AnchorSet::make(bev, bev.extent[1], bev.extent[0]);
}

HeadOutput Model::forward(
  const Tensor & image, const PointCloud & cloud, const Calibration & calib) const
{
  const int64_t X = config_.anchor_spec.extent[0];
  const int64_t Y = config_.anchor_spec.extent[1];
  Tensor img_final, img_penult;
  if (config_.lidar_only) {
    img_final = Tensor::zeros({config_.img_branch_channels, config_.fused_z, Y, X});
    img_penult = Tensor::zeros({config_.img_branch_channels, 2 * config_.fused_z, Y, X});
  } else {
    const std::vector<FeatureLevel> levels = backbone_->forward(image);
    const std::array<int64_t, 2> image_size = {image.shape()[2], image.shape()[1]};
    const AnchorVolume volume =
      config_.multi_level_image
        ? lifter_->lift(levels, calib, config_.anchor_spec, image_size)
        : lifter_->lift_single_level(levels, calib, config_.anchor_spec, image_size);
    const ImgEncoder::Output enc = img_encoder_->forward(volume);
    img_final = enc.final;
    img_penult = enc.penultimate;
  }
  const VoxelGrouping grouping = dynamic_voxelize(cloud, config_.lidar_spec);
  const SparseVoxelTensor voxels = vfe_.encode(cloud, grouping);
  const LidarEncoder::Output lid = lidar_encoder_.forward(voxels);
  const Tensor bev = fusion_.forward(img_final, lid.final, img_penult, lid.penultimate);
  return head_.forward(bev);
}

HeadOutput Model::forward_scene(const Scene & scene) const
{
  return forward(image_to_tensor(scene.image), scene.cloud, scene.calib);
}

}  // namespace fusiondet
