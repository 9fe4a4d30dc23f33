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

#include "fusiondet/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace fusiondet
{

namespace
{

std::vector<Box3D> in_range_gts(const Model & model, const Scene & scene)
{
  std::vector<Box3D> gts;
  for (const ObjectLabel & l : scene.labels) {
    std::array<int64_t, 3> cell;
    if (model.config().anchor_spec.cell_of(Vec3{l.box.x, l.box.y, l.box.z}, cell)) {
      gts.push_back(l.box);
    }
  }
  return gts;
}

void draw_line(Image & img, double x0, double y0, double x1, double y1, std::array<uint8_t, 3> c)
{
  const int64_t steps = int64_t(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
  for (int64_t i = 0; i <= steps; ++i) {
    const double t = double(i) / double(steps);
    const int64_t px = int64_t(std::lround(x0 + t * (x1 - x0)));
    const int64_t py = int64_t(std::lround(y0 + t * (y1 - y0)));
    if (px < 0 || px >= img.width || py < 0 || py >= img.height) continue;
    uint8_t * p = &img.rgb[size_t((py * img.width + px) * 3)];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }
}

void draw_box(
  Image & img, const Box3D & box, const VolumeSpec & range, double res, std::array<uint8_t, 3> c)
{
  const auto corners = bev_corners(box);
  for (int i = 0; i < 4; ++i) {
    const auto & a = corners[size_t(i)];
    const auto & b = corners[size_t((i + 1) % 4)];
    draw_line(
      img, (a[0] - range.range_min[0]) / res, (range.range_max[1] - a[1]) / res,
      (b[0] - range.range_min[0]) / res, (range.range_max[1] - b[1]) / res, c);
  }
}

}  // namespace

std::vector<Scene> load_split(const std::string & root)
{
  const int64_t n = count_frames(root);
  if (n == 0) throw std::runtime_error("load_split: no frames under " + root);
  std::vector<Scene> scenes;
  scenes.reserve(size_t(n));
  for (int64_t i = 0; i < n; ++i) {
    scenes.push_back(load_kitti_frame(frame_paths(root, i)));
  }
  return scenes;
}

std::string format_step(const StepRecord & r)
{
  char buf[160];
  std::snprintf(
    buf, sizeof(buf), "epoch=%lld step=%lld l_cls=%.6f l_reg=%.6f l_dir=%.6f total=%.6f",
    static_cast<long long>(r.epoch), static_cast<long long>(r.step), r.l_cls, r.l_reg, r.l_dir,
    r.total);
  return buf;
}

LossBundle scene_loss(const Model & model, const Scene & scene)
{
  const HeadOutput head = model.forward_scene(scene);
  const std::vector<Box3D> gts = in_range_gts(model, scene);
  const TargetAssignment assignment = assign_targets(model.anchors(), gts);
  return compute_loss(head, model.anchors(), gts, assignment);
}

void train_model(Model & model, const std::vector<Scene> & scenes, const MetricsSink & sink)
{
  if (scenes.empty()) throw std::invalid_argument("train_model: no scenes");
  const RunConfig & cfg = model.config();
  AdamWConfig opt_cfg;
  opt_cfg.lr = Scalar(cfg.lr);
  AdamW opt(model.params(), opt_cfg);
  const int64_t total_steps = cfg.epochs * int64_t(scenes.size());
  int64_t step = 0;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const Scene & scene : scenes) {
      // Cosine decay from max lr to 1%.
      const double progress = total_steps > 1 ? double(step) / double(total_steps - 1) : 0.0;
      const double lr =
        cfg.lr * (0.01 + 0.99 * 0.5 * (1.0 + std::cos(M_PI * progress)));
      opt.set_lr(Scalar(lr));
      model.params().zero_grad();
      const LossBundle loss = scene_loss(model, scene);
      loss.total.backward();
      opt.step();
      if (sink) {
        StepRecord r;
        r.epoch = epoch;
        r.step = step;
        r.l_cls = double(loss.cls.data()[0]);
        r.l_reg = double(loss.reg.data()[0]);
        r.l_dir = double(loss.dir.data()[0]);
        r.total = double(loss.total.data()[0]);
        sink(r);
      }
      ++step;
    }
  }
}

std::vector<Detection> infer_scene(const Model & model, const Scene & scene)
{
  const RunConfig & cfg = model.config();
  const NoGradGuard no_grad;
  const HeadOutput head = model.forward_scene(scene);
  return decode_and_nms(head, model.anchors(), cfg.score_thresh, cfg.nms_iou, cfg.max_detections);
}

std::vector<GtAnnotation> scene_annotations(const Scene & scene)
{
  std::vector<GtAnnotation> out;
  out.reserve(scene.labels.size());
  for (const ObjectLabel & l : scene.labels) out.push_back(to_annotation(l));
  return out;
}

ApTable evaluate_model(const Model & model, const std::vector<Scene> & scenes)
{
  std::vector<EvalFrame> frames;
  frames.reserve(scenes.size());
  for (const Scene & scene : scenes) {
    EvalFrame f;
    f.detections = infer_scene(model, scene);
    f.gts = scene_annotations(scene);
    frames.push_back(std::move(f));
  }
  return evaluate_all(frames, 0.7);
}

ObjectLabel detection_to_label(
  const Detection & det, const Calibration & calib, int64_t image_w, int64_t image_h)
{
  ObjectLabel label;
  label.box = det.box;
  label.has_score = true;
  label.score = det.score;
  // 2D box from the projected 3D corners, clamped to the image.
  const Box3D & b = det.box;
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  double u0 = 1e18, v0 = 1e18, u1 = -1e18, v1 = -1e18;
  bool any = false;
  for (int zi : {-1, 1}) {
    for (int yi : {-1, 1}) {
      for (int xi : {-1, 1}) {
        const double lx = xi * b.l / 2, ly = yi * b.w / 2;
        const Vec3 corner{b.x + c * lx - s * ly, b.y + s * lx + c * ly, b.z + zi * b.h / 2};
        const PixelProjection pp = project_point(corner, calib);
        if (pp.depth <= 0.1) continue;
        any = true;
        u0 = std::min(u0, pp.u);
        v0 = std::min(v0, pp.v);
        u1 = std::max(u1, pp.u);
        v1 = std::max(v1, pp.v);
      }
    }
  }
  if (any) {
    label.bbox = {
      std::clamp(u0, 0.0, double(image_w - 1)), std::clamp(v0, 0.0, double(image_h - 1)),
      std::clamp(u1, 0.0, double(image_w - 1)), std::clamp(v1, 0.0, double(image_h - 1))};
  }
  const Vec3 rect = calib.lidar_to_rect(Vec3{b.x, b.y, b.z});
  const double ry = wrap_angle(-b.yaw - M_PI / 2);
  label.alpha = wrap_angle(ry - std::atan2(rect.x, rect.z));
  return label;
}

Image render_bev(
  const Scene & scene, const std::vector<Detection> & detections, const VolumeSpec & range,
  double resolution)
{
  if (resolution <= 0) throw std::invalid_argument("render_bev: resolution must be positive");
  Image img;
  img.width = int64_t(std::ceil((range.range_max[0] - range.range_min[0]) / resolution));
  img.height = int64_t(std::ceil((range.range_max[1] - range.range_min[1]) / resolution));
  img.rgb.assign(size_t(img.width * img.height * 3), 0);
  for (const LidarPoint & p : scene.cloud) {
    const int64_t px = int64_t((p.x - range.range_min[0]) / resolution);
    const int64_t py = int64_t((range.range_max[1] - p.y) / resolution);
    if (px < 0 || px >= img.width || py < 0 || py >= img.height) continue;
    uint8_t * q = &img.rgb[size_t((py * img.width + px) * 3)];
    q[0] = q[1] = q[2] = 255;
  }
  for (const ObjectLabel & l : scene.labels) {
    draw_box(img, l.box, range, resolution, {0, 0, 255});  // ground truth: blue
  }
  for (const Detection & d : detections) {
    draw_box(img, d.box, range, resolution, {255, 0, 0});  // predictions: red
  }
  return img;
}

}  // namespace fusiondet
