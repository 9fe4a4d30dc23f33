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

#include "fusiondet/head.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fusiondet/eval.hpp"
#include "fusiondet/ops.hpp"

namespace fusiondet
{

AnchorSet AnchorSet::make(
  const VolumeSpec & bev, int64_t map_h, int64_t map_w, std::array<double, 3> prototype_lwh,
  double z_center)
{
  AnchorSet out;
  out.map_h = map_h;
  out.map_w = map_w;
  out.anchors.reserve(static_cast<size_t>(map_h * map_w * 2));
  const double cell_x = (bev.range_max[0] - bev.range_min[0]) / double(map_w);
  const double cell_y = (bev.range_max[1] - bev.range_min[1]) / double(map_h);
  for (int64_t row = 0; row < map_h; ++row) {
    for (int64_t col = 0; col < map_w; ++col) {
      const double x = bev.range_min[0] + (double(col) + 0.5) * cell_x;
      const double y = bev.range_min[1] + (double(row) + 0.5) * cell_y;
      for (int o = 0; o < 2; ++o) {
        out.anchors.emplace_back(
          x, y, z_center, prototype_lwh[0], prototype_lwh[1], prototype_lwh[2],
          o == 0 ? 0.0 : M_PI / 2.0);
      }
    }
  }
  return out;
}

TargetAssignment assign_targets(
  const AnchorSet & anchors, const std::vector<Box3D> & gts, double pos_iou, double neg_iou)
{
  TargetAssignment out;
  out.labels.assign(anchors.anchors.size(), TargetAssignment::kNegative);
  if (gts.empty()) {
    return out;
  }
  std::vector<int> best_anchor(gts.size(), -1);
  std::vector<double> best_anchor_iou(gts.size(), 0.0);
  for (size_t a = 0; a < anchors.anchors.size(); ++a) {
    double best = 0;
    int best_gt = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      const double iou = bev_iou(anchors.anchors[a], gts[g]);
      if (iou > best) {
        best = iou;
        best_gt = static_cast<int>(g);
      }
      if (iou > best_anchor_iou[g]) {
        best_anchor_iou[g] = iou;
        best_anchor[g] = static_cast<int>(a);
      }
    }
    if (best >= pos_iou) {
      out.labels[a] = best_gt;
    } else if (best >= neg_iou) {
      out.labels[a] = TargetAssignment::kIgnore;
    }
  }
  // Every GT claims its best-overlap anchor, even below the threshold.
  for (size_t g = 0; g < gts.size(); ++g) {
    if (best_anchor[g] >= 0 && best_anchor_iou[g] > 0) {
      out.labels[static_cast<size_t>(best_anchor[g])] = static_cast<int>(g);
    }
  }
  for (int l : out.labels) {
    if (l >= 0) ++out.positives;
  }
  return out;
}

std::array<double, 7> encode_box(const Box3D & anchor, const Box3D & gt)
{
  if (!anchor.valid_sizes()) {
    throw std::invalid_argument("encode_box: anchor sizes must be positive");
  }
  const double d = std::sqrt(anchor.l * anchor.l + anchor.w * anchor.w);
  return {
    (gt.x - anchor.x) / d,
    (gt.y - anchor.y) / d,
    (gt.z - anchor.z) / anchor.h,
    std::log(gt.l / anchor.l),
    std::log(gt.w / anchor.w),
    std::log(gt.h / anchor.h),
    std::sin(wrap_angle(gt.yaw - anchor.yaw)),
  };
}

int direction_bin(const Box3D & anchor, const Box3D & gt)
{
  return std::cos(wrap_angle(gt.yaw - anchor.yaw)) >= 0 ? 0 : 1;
}

Box3D decode_box(const Box3D & anchor, const std::array<double, 7> & deltas, int dir_bin)
{
  const double d = std::sqrt(anchor.l * anchor.l + anchor.w * anchor.w);
  double delta_yaw = std::asin(std::clamp(deltas[6], -1.0, 1.0));
  if (dir_bin == 1) {
    delta_yaw = M_PI - delta_yaw;
  }
  return Box3D(
    anchor.x + deltas[0] * d, anchor.y + deltas[1] * d, anchor.z + deltas[2] * anchor.h,
    anchor.l * std::exp(deltas[3]), anchor.w * std::exp(deltas[4]), anchor.h * std::exp(deltas[5]),
    anchor.yaw + delta_yaw);
}

DetectionHead::DetectionHead(
  ParamStore & params, const std::string & name, int64_t in_ch, Rng & rng)
: cls_(params, name + ".cls", in_ch, 2, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, rng),
  reg_(params, name + ".reg", in_ch, 14, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, rng),
  dir_(params, name + ".dir", in_ch, 4, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, rng)
{
}

HeadOutput DetectionHead::forward(const Tensor & features) const
{
  if (features.shape().size() != 3) {
    throw std::invalid_argument("DetectionHead: expected [C x H x W] features");
  }
  const int64_t h = features.shape()[1];
  const int64_t w = features.shape()[2];
  Tensor x = reshape(features, {features.shape()[0], 1, h, w});
  // Branch maps come out as [K*2 x H x W]; permuting (H, W, channel) gives
  // the anchor-major order (row*W + col)*2 + orientation.
  auto to_anchor_rows = [&](const Tensor & t, int64_t per_anchor) {
    Tensor m = reshape(t, {per_anchor * 2, h, w});
    Tensor p = permute(m, {1, 2, 0});  // H x W x (2*per_anchor)
    return reshape(p, {h * w * 2, per_anchor});
  };
  HeadOutput out;
  out.cls = reshape(to_anchor_rows(cls_(x), 1), {h * w * 2});
  out.reg = to_anchor_rows(reg_(x), 7);
  out.dir = to_anchor_rows(dir_(x), 2);
  return out;
}

LossBundle compute_loss(
  const HeadOutput & output, const AnchorSet & anchors, const std::vector<Box3D> & gts,
  const TargetAssignment & assignment, const LossConstants & constants)
{
  const size_t n = anchors.anchors.size();
  if (assignment.labels.size() != n) {
    throw std::invalid_argument("compute_loss: assignment size mismatch");
  }
  std::vector<int> cls_labels(n);
  for (size_t i = 0; i < n; ++i) {
    const int l = assignment.labels[i];
    cls_labels[i] = l >= 0 ? 1 : (l == TargetAssignment::kIgnore ? -1 : 0);
  }
  LossBundle bundle;
  bundle.cls = focal_loss(output.cls, cls_labels, constants.focal_alpha, constants.focal_gamma);

  const Scalar pos_norm = Scalar(1) / Scalar(std::max<int64_t>(assignment.positives, 1));
  std::vector<Scalar> reg_targets(n * 7, Scalar(0));
  std::vector<Scalar> row_weight(n, Scalar(0));
  std::vector<int> dir_targets(n, 0);
  std::vector<Scalar> dir_row_weight(n, Scalar(0));
  for (size_t i = 0; i < n; ++i) {
    const int l = assignment.labels[i];
    if (l < 0) continue;
    const auto deltas = encode_box(anchors.anchors[i], gts[static_cast<size_t>(l)]);
    for (int c = 0; c < 7; ++c) {
      reg_targets[i * 7 + static_cast<size_t>(c)] = Scalar(deltas[static_cast<size_t>(c)]);
    }
    row_weight[i] = pos_norm;
    dir_targets[i] = direction_bin(anchors.anchors[i], gts[static_cast<size_t>(l)]);
    dir_row_weight[i] = pos_norm;
  }
  bundle.reg = smooth_l1_loss(output.reg, reg_targets, row_weight, constants.smooth_l1_beta);
  bundle.dir = softmax_cross_entropy(output.dir, dir_targets, dir_row_weight);
  bundle.total = add(
    bundle.cls,
    add(scale(bundle.reg, constants.reg_weight), scale(bundle.dir, constants.dir_weight)));
  return bundle;
}

std::vector<Detection> decode_and_nms(
  const HeadOutput & output, const AnchorSet & anchors, double score_thresh, double iou_thresh,
  int64_t max_out)
{
  if (score_thresh < 0 || score_thresh > 1 || iou_thresh < 0 || iou_thresh > 1) {
    throw std::invalid_argument("decode_and_nms: thresholds must be in [0,1]");
  }
  const size_t n = anchors.anchors.size();
  std::vector<Detection> candidates;
  for (size_t i = 0; i < n; ++i) {
    const double logit = double(output.cls.data()[i]);
    const double score = 1.0 / (1.0 + std::exp(-logit));
    if (score <= score_thresh) continue;
    std::array<double, 7> deltas{};
    for (int c = 0; c < 7; ++c) {
      deltas[static_cast<size_t>(c)] = double(output.reg.data()[i * 7 + static_cast<size_t>(c)]);
    }
    const int bin =
      output.dir.data()[i * 2] >= output.dir.data()[i * 2 + 1] ? 0 : 1;
    Detection det;
    det.box = decode_box(anchors.anchors[i], deltas, bin);
    det.score = score;
    candidates.push_back(det);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const auto & a, const auto & b) {
    return a.score > b.score;
  });
  std::vector<Detection> kept;
  for (const Detection & cand : candidates) {
    if (static_cast<int64_t>(kept.size()) >= max_out) break;
    bool suppressed = false;
    for (const Detection & k : kept) {
      if (bev_iou(cand.box, k.box) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

}  // namespace fusiondet
