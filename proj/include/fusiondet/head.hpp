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

#ifndef FUSIONDET_HEAD_HPP_
#define FUSIONDET_HEAD_HPP_

#include <array>
#include <string>
#include <vector>

#include "fusiondet/box3d.hpp"
#include "fusiondet/geometry.hpp"
#include "fusiondet/nn.hpp"

namespace fusiondet
{

/// One Car-prototype anchor per BEV cell per orientation (0, pi/2).
/// Anchor index = (row * W + col) * 2 + orientation.
struct AnchorSet
{
  std::vector<Box3D> anchors;
  int64_t map_h = 0;  // rows (y cells)
  int64_t map_w = 0;  // cols (x cells)

  static AnchorSet make(
    const VolumeSpec & bev, int64_t map_h, int64_t map_w,
    std::array<double, 3> prototype_lwh = {3.9, 1.6, 1.56}, double z_center = -1.0);
};

/// Per-anchor assignment: gt index for positives, kNegative, or kIgnore.
struct TargetAssignment
{
  static constexpr int kNegative = -1;
  static constexpr int kIgnore = -2;
  std::vector<int> labels;
  int64_t positives = 0;
};

/// BEV-IoU matching: positive at IoU >= pos_iou, negative below neg_iou,
/// ignore in between; each GT forces its best-IoU anchor positive.
TargetAssignment assign_targets(
  const AnchorSet & anchors, const std::vector<Box3D> & gts, double pos_iou = 0.6,
  double neg_iou = 0.45);

/// SECOND delta encoding; the yaw channel carries sin(yaw_g - yaw_a) and the
/// hemisphere goes into the direction bin.
std::array<double, 7> encode_box(const Box3D & anchor, const Box3D & gt);
Box3D decode_box(const Box3D & anchor, const std::array<double, 7> & deltas, int dir_bin);
/// 0 when cos(yaw_g - yaw_a) >= 0, else 1.
int direction_bin(const Box3D & anchor, const Box3D & gt);

struct HeadOutput
{
  Tensor cls;  // [N_anchors] logits (single class)
  Tensor reg;  // [N_anchors x 7]
  Tensor dir;  // [N_anchors x 2]
};

/// SECOND-style 2D anchor head over the decoded fusion map: three 1x1 conv
/// branches for class score, box deltas and direction.
class DetectionHead
{
public:
  DetectionHead(ParamStore & params, const std::string & name, int64_t in_ch, Rng & rng);

  /// input: [C x H x W] feature map; anchors per cell: 2.
  HeadOutput forward(const Tensor & features) const;

private:
  Conv3dLayer cls_;
  Conv3dLayer reg_;
  Conv3dLayer dir_;
};

struct LossBundle
{
  Tensor cls;
  Tensor reg;
  Tensor dir;
  Tensor total;  // cls + 2*reg + 0.2*dir
};

struct LossConstants
{
  Scalar focal_alpha = Scalar(0.25);
  Scalar focal_gamma = Scalar(2.0);
  Scalar smooth_l1_beta = Scalar(1.0 / 9.0);
  Scalar reg_weight = Scalar(2.0);
  Scalar dir_weight = Scalar(0.2);
};

LossBundle compute_loss(
  const HeadOutput & output, const AnchorSet & anchors, const std::vector<Box3D> & gts,
  const TargetAssignment & assignment, const LossConstants & constants = {});

/// Sigmoid-score thresholding, delta decoding with hemisphere fix from the
/// direction bin, then greedy BEV rotated NMS, score-descending, capped.
std::vector<Detection> decode_and_nms(
  const HeadOutput & output, const AnchorSet & anchors, double score_thresh, double iou_thresh,
  int64_t max_out);

}  // namespace fusiondet

#endif  // FUSIONDET_HEAD_HPP_
