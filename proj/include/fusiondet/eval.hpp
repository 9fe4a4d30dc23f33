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

#ifndef FUSIONDET_EVAL_HPP_
#define FUSIONDET_EVAL_HPP_

#include <array>
#include <string>
#include <vector>

#include "fusiondet/box3d.hpp"

namespace fusiondet
{

/// Exact rotated-rectangle overlap over union in the BEV plane
/// (Sutherland-Hodgman clipping, area epsilon 1e-12 for degeneracies).
double bev_iou(const Box3D & a, const Box3D & b);

/// BEV intersection area times vertical overlap, over volume union.
double iou_3d(const Box3D & a, const Box3D & b);

/// BEV footprint corners, counter-clockwise.
std::array<std::array<double, 2>, 4> bev_corners(const Box3D & box);

/// Convex polygon area of the intersection of two convex polygons.
double convex_intersection_area(
  const std::vector<std::array<double, 2>> & subject, const std::vector<std::array<double, 2>> & clip);

enum class Difficulty { kEasy = 0, kModerate = 1, kHard = 2, kNone = 3 };

struct GtAnnotation
{
  Box3D box;
  double bbox_height_px = 0;  // projected 2D box height
  int occlusion = 0;          // 0..3
  double truncation = 0;      // 0..1
};

/// KITTI difficulty bucketing: easy needs >= 40 px, occ 0, trunc <= 0.15;
/// moderate >= 25 px, occ <= 1, trunc <= 0.30; hard >= 25 px, occ <= 2,
/// trunc <= 0.50. Returns the easiest bucket the GT satisfies, kNone if none.
Difficulty difficulty_of(const GtAnnotation & gt);

enum class RecallMode { kR11, kR40 };

struct EvalConfig
{
  double iou_threshold = 0.7;
  RecallMode mode = RecallMode::kR40;
  Difficulty difficulty = Difficulty::kHard;  // evaluated bucket
};

struct EvalFrame
{
  std::vector<Detection> detections;
  std::vector<GtAnnotation> gts;
};

/// KITTI-protocol AP: score-descending greedy matching (each GT at most
/// once, 3D IoU >= threshold); GTs harder than the evaluated bucket are
/// ignored, not penalized; detections matching ignored GTs count neither
/// way. AP is the mean max-interpolated precision at the fixed recall grid.
double average_precision(const std::vector<EvalFrame> & frames, const EvalConfig & config);

struct ApTable
{
  // [mode r11/r40][difficulty easy/moderate/hard]
  double ap[2][3] = {};
};

ApTable evaluate_all(const std::vector<EvalFrame> & frames, double iou_threshold);
std::string format_ap_table(const ApTable & table);
std::string format_ap_keyvalues(const ApTable & table);

}  // namespace fusiondet

#endif  // FUSIONDET_EVAL_HPP_
