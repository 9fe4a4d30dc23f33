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

#include <algorithm>
#include <cmath>
#include <random>

#include <doctest.h>

#include "fusiondet/eval.hpp"

using namespace fusiondet;

namespace
{

bool inside_box_bev(const Box3D & b, double px, double py)
{
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double dx = c * (px - b.x) + s * (py - b.y);
  const double dy = -s * (px - b.x) + c * (py - b.y);
  return std::abs(dx) <= b.l / 2 && std::abs(dy) <= b.w / 2;
}

// Grid rasterization of the BEV intersection area over the union of the two
// footprints' bounding boxes.
double rasterized_bev_iou(const Box3D & a, const Box3D & b, double h)
{
  double lo_x = 1e30, lo_y = 1e30, hi_x = -1e30, hi_y = -1e30;
  for (const Box3D * box : {&a, &b}) {
    const double r = std::hypot(box->l, box->w) / 2;
    lo_x = std::min(lo_x, box->x - r);
    hi_x = std::max(hi_x, box->x + r);
    lo_y = std::min(lo_y, box->y - r);
    hi_y = std::max(hi_y, box->y + r);
  }
  int64_t inter = 0;
  for (double px = lo_x + h / 2; px < hi_x; px += h) {
    for (double py = lo_y + h / 2; py < hi_y; py += h) {
      if (inside_box_bev(a, px, py) && inside_box_bev(b, px, py)) ++inter;
    }
  }
  const double inter_area = double(inter) * h * h;
  const double uni = a.l * a.w + b.l * b.w - inter_area;
  return inter_area / uni;
}

GtAnnotation easy_gt(const Box3D & box)
{
  GtAnnotation gt;
  gt.box = box;
  gt.bbox_height_px = 60;
  gt.occlusion = 0;
  gt.truncation = 0;
  return gt;
}

// Independent AP computation: explicit TP/FP sequencing plus grid
// interpolation, written against the KITTI definition rather than the
// production loop structure.
double ap_oracle(
  const std::vector<char> & tp_sequence, int64_t total_gts, bool r40)
{
  std::vector<double> recalls, precisions;
  int64_t tp = 0, fp = 0;
  for (char is_tp : tp_sequence) {
    if (is_tp) ++tp; else ++fp;
    recalls.push_back(double(tp) / double(total_gts));
    precisions.push_back(double(tp) / double(tp + fp));
  }
  double ap = 0;
  const int points = r40 ? 40 : 11;
  for (int i = r40 ? 1 : 0; i <= (r40 ? 40 : 10); ++i) {
    const double r = r40 ? double(i) / 40.0 : double(i) / 10.0;
    double best = 0;
    for (size_t j = 0; j < recalls.size(); ++j) {
      if (recalls[j] >= r - 1e-12) best = std::max(best, precisions[j]);
    }
    ap += best;
  }
  return ap / double(points);
}

}  // namespace

TEST_CASE("axis-aligned BEV IoU matches the analytic rectangle overlap")
{
  const Box3D a(0, 0, 0, 4, 2, 1, 0);
  SUBCASE("identical boxes") { CHECK(bev_iou(a, a) == doctest::Approx(1.0).epsilon(1e-12)); }
  SUBCASE("half shift along length")
  {
    const Box3D b(2, 0, 0, 4, 2, 1, 0);
    // Intersection 2x2 = 4; union 8 + 8 - 4 = 12.
    CHECK(bev_iou(a, b) == doctest::Approx(4.0 / 12.0).epsilon(1e-12));
  }
  SUBCASE("corner overlap")
  {
    const Box3D b(3, 1.5, 0, 4, 2, 1, 0);
    // Intersection 1x0.5; union 16 - 0.5.
    CHECK(bev_iou(a, b) == doctest::Approx(0.5 / 15.5).epsilon(1e-12));
  }
  SUBCASE("disjoint") { CHECK(bev_iou(a, Box3D(10, 0, 0, 4, 2, 1, 0)) == 0.0); }
  SUBCASE("perpendicular same center")
  {
    const Box3D b(0, 0, 0, 4, 2, 1, M_PI / 2);
    // Intersection 2x2 = 4; union 12.
    CHECK(bev_iou(a, b) == doctest::Approx(4.0 / 12.0).epsilon(1e-12));
  }
}

TEST_CASE("unit squares at 45 degrees intersect in the regular octagon")
{
  const Box3D a(0, 0, 0, 1, 1, 1, 0);
  const Box3D b(0, 0, 0, 1, 1, 1, M_PI / 4);
  const double inter = 2.0 * (std::sqrt(2.0) - 1.0);
  CHECK(bev_iou(a, b) == doctest::Approx(inter / (2.0 - inter)).epsilon(1e-12));
}

TEST_CASE("rotated BEV IoU agrees with grid rasterization")
{
  std::mt19937_64 rng(53);
  std::uniform_real_distribution<double> pos(-0.8, 0.8);
  std::uniform_real_distribution<double> yaw(-M_PI, M_PI);
  std::uniform_real_distribution<double> len(1.0, 2.5);
  for (int trial = 0; trial < 3; ++trial) {
    const Box3D a(pos(rng), pos(rng), 0, len(rng), len(rng), 1, yaw(rng));
    const Box3D b(pos(rng), pos(rng), 0, len(rng), len(rng), 1, yaw(rng));
    const double exact = bev_iou(a, b);
    const double approx = rasterized_bev_iou(a, b, 1e-3);
    CHECK(std::abs(exact - approx) < 1e-3);
  }
}

TEST_CASE("3D IoU applies the vertical overlap")
{
  const Box3D a(0, 0, 0, 4, 2, 2, 0);
  const Box3D b(0, 0, 1, 4, 2, 2, 0);  // z overlap 1 of 2
  // Volumes 16 each; intersection 8 * 1 = 8; union 24.
  CHECK(iou_3d(a, b) == doctest::Approx(8.0 / 24.0).epsilon(1e-12));
  CHECK(iou_3d(a, Box3D(0, 0, 5, 4, 2, 2, 0)) == 0.0);
  CHECK(iou_3d(a, a) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("bev corners are counter-clockwise and sized to the footprint")
{
  const Box3D box(1, 2, 0, 4, 2, 1, 0.3);
  const auto corners = bev_corners(box);
  double area2 = 0;
  for (int i = 0; i < 4; ++i) {
    const auto & p = corners[size_t(i)];
    const auto & q = corners[size_t((i + 1) % 4)];
    area2 += p[0] * q[1] - q[0] * p[1];
  }
  CHECK(area2 / 2 == doctest::Approx(8.0).epsilon(1e-9));  // positive = CCW
}

TEST_CASE("difficulty bucketing follows the KITTI thresholds")
{
  auto gt = [](double px, int occ, double tr) {
    GtAnnotation g;
    g.bbox_height_px = px;
    g.occlusion = occ;
    g.truncation = tr;
    return g;
  };
  CHECK(difficulty_of(gt(45, 0, 0.1)) == Difficulty::kEasy);
  CHECK(difficulty_of(gt(40, 0, 0.15)) == Difficulty::kEasy);
  CHECK(difficulty_of(gt(39, 0, 0.0)) == Difficulty::kModerate);
  CHECK(difficulty_of(gt(45, 1, 0.0)) == Difficulty::kModerate);
  CHECK(difficulty_of(gt(45, 0, 0.2)) == Difficulty::kModerate);
  CHECK(difficulty_of(gt(30, 2, 0.4)) == Difficulty::kHard);
  CHECK(difficulty_of(gt(45, 0, 0.45)) == Difficulty::kHard);
  CHECK(difficulty_of(gt(20, 0, 0.0)) == Difficulty::kNone);
  CHECK(difficulty_of(gt(45, 3, 0.0)) == Difficulty::kNone);
  CHECK(difficulty_of(gt(45, 0, 0.6)) == Difficulty::kNone);
}

TEST_CASE("AP matches exhaustive PR enumeration on a fixed fixture")
{
  // Frame 1: three GTs, detections hit GT0 (score .9), GT1 (.7), miss (.6).
  // Frame 2: two GTs, detections hit GT0 (.8), miss (.5), miss (.4).
  const Box3D g0(10, 0, 0, 4, 2, 2, 0);
  const Box3D g1(20, 5, 0, 4, 2, 2, 0.4);
  const Box3D g2(30, -5, 0, 4, 2, 2, -0.7);
  const Box3D far1(50, 20, 0, 4, 2, 2, 0);
  const Box3D far2(60, -20, 0, 4, 2, 2, 0);

  std::vector<EvalFrame> frames(2);
  frames[0].gts = {easy_gt(g0), easy_gt(g1), easy_gt(g2)};
  frames[0].detections = {{g0, 0.9}, {g1, 0.7}, {far1, 0.6}};
  frames[1].gts = {easy_gt(g0), easy_gt(g1)};
  frames[1].detections = {{g0, 0.8}, {far1, 0.5}, {far2, 0.4}};

  // Score-descending TP/FP sequence: .9 TP, .8 TP, .7 TP, .6 FP, .5 FP, .4 FP.
  const std::vector<char> seq{1, 1, 1, 0, 0, 0};
  EvalConfig config;
  config.difficulty = Difficulty::kHard;
  config.mode = RecallMode::kR40;
  CHECK(std::abs(average_precision(frames, config) - ap_oracle(seq, 5, true)) < 1e-10);
  config.mode = RecallMode::kR11;
  CHECK(std::abs(average_precision(frames, config) - ap_oracle(seq, 5, false)) < 1e-10);
}

TEST_CASE("ignored GTs are neither required nor penalized")
{
  const Box3D g0(10, 0, 0, 4, 2, 2, 0);
  const Box3D g_hard(20, 5, 0, 4, 2, 2, 0);

  std::vector<EvalFrame> frames(1);
  GtAnnotation hard = easy_gt(g_hard);
  hard.occlusion = 2;
  hard.truncation = 0.4;
  frames[0].gts = {easy_gt(g0), hard};
  // Both detections match; the hard GT is outside the easy bucket, so the
  // second detection counts neither as TP nor FP.
  frames[0].detections = {{g0, 0.9}, {g_hard, 0.8}};

  EvalConfig config;
  config.difficulty = Difficulty::kEasy;
  config.mode = RecallMode::kR40;
  CHECK(average_precision(frames, config) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("the AP table fills both recall modes and all difficulties")
{
  const Box3D g0(10, 0, 0, 4, 2, 2, 0);
  std::vector<EvalFrame> frames(1);
  frames[0].gts = {easy_gt(g0)};
  frames[0].detections = {{g0, 0.9}};
  const ApTable table = evaluate_all(frames, 0.7);
  for (int m = 0; m < 2; ++m) {
    for (int d = 0; d < 3; ++d) {
      CHECK(table.ap[m][d] == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  const std::string text = format_ap_table(table);
  CHECK(text.find("R11") != std::string::npos);
  CHECK(text.find("R40") != std::string::npos);
}
