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

#ifndef FUSIONDET_RUNNER_HPP_
#define FUSIONDET_RUNNER_HPP_

#include <functional>
#include <string>
#include <vector>

#include "fusiondet/eval.hpp"
#include "fusiondet/model.hpp"

namespace fusiondet
{

/// All frames under the KITTI-style directory, loaded into memory.
std::vector<Scene> load_split(const std::string & root);

struct StepRecord
{
  int64_t epoch = 0;
  int64_t step = 0;
  double l_cls = 0, l_reg = 0, l_dir = 0, total = 0;
};

std::string format_step(const StepRecord & record);

using MetricsSink = std::function<void(const StepRecord &)>;

/// One loss evaluation (forward + assignment) without optimizer state.
LossBundle scene_loss(const Model & model, const Scene & scene);

/// Batch-1 training over the scene list, cosine learning rate from
/// config.lr down to 1% over all steps. One record per step.
void train_model(
  Model & model, const std::vector<Scene> & scenes, const MetricsSink & sink = {});

std::vector<Detection> infer_scene(const Model & model, const Scene & scene);

/// AP table over a split; GT annotations come from the scene labels.
ApTable evaluate_model(const Model & model, const std::vector<Scene> & scenes);

/// Detections from label files scored by the label's score column.
std::vector<GtAnnotation> scene_annotations(const Scene & scene);

/// Detection as a writable label line: 2D box from the projected hull,
/// truncation/occlusion zeroed.
ObjectLabel detection_to_label(
  const Detection & det, const Calibration & calib, int64_t image_w, int64_t image_h);

/// Top-down raster: points in white over black, GT boxes blue, detections
/// red, one pixel per `resolution` meters.
Image render_bev(
  const Scene & scene, const std::vector<Detection> & detections, const VolumeSpec & range,
  double resolution = 0.16);

}  // namespace fusiondet

#endif  // FUSIONDET_RUNNER_HPP_
