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

#include "fusiondet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace fusiondet
{

namespace
{

constexpr double kAreaEps = 1e-12;

double polygon_area(const std::vector<std::array<double, 2>> & poly)
{
  double acc = 0;
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const auto & p = poly[i];
    const auto & q = poly[(i + 1) % n];
    acc += p[0] * q[1] - q[0] * p[1];
  }
  return 0.5 * std::abs(acc);
}

}  // namespace

std::array<std::array<double, 2>, 4> bev_corners(const Box3D & box)
{
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double hl = box.l / 2.0, hw = box.w / 2.0;
  // Local corners CCW: (+l,+w), (-l,+w), (-l,-w), (+l,-w).
  const double local[4][2] = {{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}};
  std::array<std::array<double, 2>, 4> out;
  for (int i = 0; i < 4; ++i) {
    out[i] = {box.x + c * local[i][0] - s * local[i][1],
              box.y + s * local[i][0] + c * local[i][1]};
  }
  return out;
}

double convex_intersection_area(
  const std::vector<std::array<double, 2>> & subject, const std::vector<std::array<double, 2>> & clip)
{
  // Sutherland-Hodgman: clip the subject polygon by each edge of the
  // (convex, CCW) clip polygon.
  std::vector<std::array<double, 2>> poly = subject;
  const size_t m = clip.size();
  for (size_t e = 0; e < m && !poly.empty(); ++e) {
    const auto & a = clip[e];
    const auto & b = clip[(e + 1) % m];
    std::vector<std::array<double, 2>> next;
    const size_t n = poly.size();
    auto inside = [&](const std::array<double, 2> & p) {
      return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= -kAreaEps;
    };
    auto intersect = [&](const std::array<double, 2> & p, const std::array<double, 2> & q) {
      const double x1 = b[0] - a[0], y1 = b[1] - a[1];
      const double x2 = q[0] - p[0], y2 = q[1] - p[1];
      const double den = x1 * y2 - y1 * x2;
      const double t = ((p[0] - a[0]) * y1 - (p[1] - a[1]) * x1) / den;
      return std::array<double, 2>{p[0] + t * x2, p[1] + t * y2};
    };
    for (size_t i = 0; i < n; ++i) {
      const auto & p = poly[i];
      const auto & q = poly[(i + 1) % n];
      const bool pin = inside(p), qin = inside(q);
      if (pin && qin) {
        next.push_back(q);
      } else if (pin && !qin) {
        next.push_back(intersect(p, q));
      } else if (!pin && qin) {
        next.push_back(intersect(p, q));
        next.push_back(q);
      }
    }
    poly = std::move(next);
  }
  if (poly.size() < 3) return 0.0;
  return polygon_area(poly);
}

double bev_iou(const Box3D & a, const Box3D & b)
{
  if (!a.valid_sizes() || !b.valid_sizes()) {
    throw std::invalid_argument("bev_iou: box sizes must be positive");
  }
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  const std::vector<std::array<double, 2>> pa(ca.begin(), ca.end());
  const std::vector<std::array<double, 2>> pb(cb.begin(), cb.end());
  const double inter = convex_intersection_area(pa, pb);
  const double area_a = a.l * a.w;
  const double area_b = b.l * b.w;
  const double uni = area_a + area_b - inter;
  if (uni <= kAreaEps) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_3d(const Box3D & a, const Box3D & b)
{
  if (!a.valid_sizes() || !b.valid_sizes()) {
    throw std::invalid_argument("iou_3d: box sizes must be positive");
  }
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  const std::vector<std::array<double, 2>> pa(ca.begin(), ca.end());
  const std::vector<std::array<double, 2>> pb(cb.begin(), cb.end());
  const double inter_area = convex_intersection_area(pa, pb);
  const double z_lo = std::max(a.z - a.h / 2.0, b.z - b.h / 2.0);
  const double z_hi = std::min(a.z + a.h / 2.0, b.z + b.h / 2.0);
  const double overlap_h = std::max(0.0, z_hi - z_lo);
  const double inter = inter_area * overlap_h;
  const double vol_a = a.l * a.w * a.h;
  const double vol_b = b.l * b.w * b.h;
  const double uni = vol_a + vol_b - inter;
  if (uni <= kAreaEps) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

Difficulty difficulty_of(const GtAnnotation & gt)
{
  if (gt.bbox_height_px >= 40.0 && gt.occlusion == 0 && gt.truncation <= 0.15) {
    return Difficulty::kEasy;
  }
  if (gt.bbox_height_px >= 25.0 && gt.occlusion <= 1 && gt.truncation <= 0.30) {
    return Difficulty::kModerate;
  }
  if (gt.bbox_height_px >= 25.0 && gt.occlusion <= 2 && gt.truncation <= 0.50) {
    return Difficulty::kHard;
  }
  return Difficulty::kNone;
}

namespace
{

struct RankedDetection
{
  double score;
  size_t frame;
  size_t index;
};

}  // namespace

double average_precision(const std::vector<EvalFrame> & frames, const EvalConfig & config)
{
  if (config.iou_threshold <= 0 || config.iou_threshold > 1) {
    throw std::invalid_argument("average_precision: threshold must be in (0,1]");
  }
  // A GT counts when its bucket is at most the evaluated difficulty;
  // harder (or unbucketed) GTs are ignored, not penalized.
  const int level = static_cast<int>(config.difficulty);
  std::vector<std::vector<int>> gt_state(frames.size());  // 0 free, 1 matched
  std::vector<std::vector<bool>> gt_counted(frames.size());
  int64_t total_gts = 0;
  for (size_t f = 0; f < frames.size(); ++f) {
    gt_state[f].assign(frames[f].gts.size(), 0);
    gt_counted[f].resize(frames[f].gts.size());
    for (size_t g = 0; g < frames[f].gts.size(); ++g) {
      const Difficulty d = difficulty_of(frames[f].gts[g]);
      const bool counted = static_cast<int>(d) <= level;
      gt_counted[f][g] = counted;
      if (counted) ++total_gts;
    }
  }
  if (total_gts == 0) return 0.0;

  std::vector<RankedDetection> ranked;
  for (size_t f = 0; f < frames.size(); ++f) {
    for (size_t i = 0; i < frames[f].detections.size(); ++i) {
      ranked.push_back({frames[f].detections[i].score, f, i});
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto & a, const auto & b) {
    return a.score > b.score;
  });

  std::vector<double> recall_curve, precision_curve;
  int64_t tp = 0, fp = 0;
  for (const RankedDetection & rd : ranked) {
    const auto & det = frames[rd.frame].detections[rd.index];
    double best_iou = 0;
    int best_gt = -1;
    for (size_t g = 0; g < frames[rd.frame].gts.size(); ++g) {
      if (gt_state[rd.frame][g]) continue;
      const double iou = iou_3d(det.box, frames[rd.frame].gts[g].box);
      if (iou >= config.iou_threshold && iou > best_iou) {
        best_iou = iou;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      gt_state[rd.frame][static_cast<size_t>(best_gt)] = 1;
      if (gt_counted[rd.frame][static_cast<size_t>(best_gt)]) {
        ++tp;
      } else {
        continue;  // matched an ignored GT: neither TP nor FP
      }
    } else {
      ++fp;
    }
    recall_curve.push_back(double(tp) / double(total_gts));
    precision_curve.push_back(double(tp) / double(tp + fp));
  }

  auto interpolated_precision = [&](double recall) {
    double best = 0;
    for (size_t i = 0; i < recall_curve.size(); ++i) {
      if (recall_curve[i] >= recall - 1e-12) {
        best = std::max(best, precision_curve[i]);
      }
    }
    return best;
  };

  double ap = 0;
  if (config.mode == RecallMode::kR11) {
    for (int i = 0; i <= 10; ++i) {
      ap += interpolated_precision(double(i) / 10.0);
    }
    ap /= 11.0;
  } else {
    for (int i = 1; i <= 40; ++i) {
      ap += interpolated_precision(double(i) / 40.0);
    }
    ap /= 40.0;
  }
  return ap;
}

ApTable evaluate_all(const std::vector<EvalFrame> & frames, double iou_threshold)
{
  ApTable table;
  for (int m = 0; m < 2; ++m) {
    for (int d = 0; d < 3; ++d) {
      EvalConfig cfg;
      cfg.iou_threshold = iou_threshold;
      cfg.mode = m == 0 ? RecallMode::kR11 : RecallMode::kR40;
      cfg.difficulty = static_cast<Difficulty>(d);
      table.ap[m][d] = average_precision(frames, cfg);
    }
  }
  return table;
}

std::string format_ap_table(const ApTable & table)
{
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "          easy    moderate  hard\n";
  os << "AP R11    " << table.ap[0][0] << "  " << table.ap[0][1] << "    " << table.ap[0][2]
     << "\n";
  os << "AP R40    " << table.ap[1][0] << "  " << table.ap[1][1] << "    " << table.ap[1][2]
     << "\n";
  return os.str();
}

std::string format_ap_keyvalues(const ApTable & table)
{
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  const char * modes[2] = {"r11", "r40"};
  const char * diffs[3] = {"easy", "moderate", "hard"};
  for (int m = 0; m < 2; ++m) {
    for (int d = 0; d < 3; ++d) {
      os << "ap_" << modes[m] << "_" << diffs[d] << "=" << table.ap[m][d] << "\n";
    }
  }
  return os.str();
}

}  // namespace fusiondet
