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

#include "fusiondet/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fusiondet/eval.hpp"

namespace fusiondet
{

namespace
{

constexpr double kRayEps = 1e-9;

std::string fmt2(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

// splitmix64; decorrelates (seed, index) pairs into per-scene RNG streams.
uint64_t mix64(uint64_t x)
{
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

struct SceneRng
{
  uint64_t state;
  explicit SceneRng(uint64_t s) : state(s) {}
  uint64_t next()
  {
    state += 0x9E3779B97F4A7C15ULL;
    return mix64(state);
  }
  double uniform(double lo, double hi)
  {
    const double u = double(next() >> 11) * 0x1.0p-53;
    return lo + u * (hi - lo);
  }
  int64_t uniform_int(int64_t lo, int64_t hi)  // inclusive
  {
    return lo + int64_t(next() % uint64_t(hi - lo + 1));
  }
};

struct HitRecord
{
  double t = -1;
  int box = -1;  // -1: ground
};

// Slab test in the box frame; returns the nearest positive entry distance.
bool ray_box_hit(const Vec3 & dir, const Box3D & box, double & t_hit)
{
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  // Ray origin is the sensor at (0,0,0); transform into the box frame.
  const double ox = c * (-box.x) + s * (-box.y);
  const double oy = -s * (-box.x) + c * (-box.y);
  const double oz = -box.z;
  const double dx = c * dir.x + s * dir.y;
  const double dy = -s * dir.x + c * dir.y;
  const double dz = dir.z;
  const double half[3] = {box.l / 2, box.w / 2, box.h / 2};
  const double o[3] = {ox, oy, oz};
  const double d[3] = {dx, dy, dz};
  double t0 = 0, t1 = 1e18;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < kRayEps) {
      if (o[a] < -half[a] || o[a] > half[a]) return false;
      continue;
    }
    double ta = (-half[a] - o[a]) / d[a];
    double tb = (half[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  if (t0 <= kRayEps) return false;
  t_hit = t0;
  return true;
}

std::vector<std::array<double, 2>> convex_hull(std::vector<std::array<double, 2>> pts)
{
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  const size_t n = pts.size();
  if (n < 3) return pts;
  auto cross = [](const std::array<double, 2> & o, const std::array<double, 2> & a,
                  const std::array<double, 2> & b) {
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
  };
  std::vector<std::array<double, 2>> hull(2 * n);
  size_t k = 0;
  for (size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (size_t i = n - 1, lower = k + 1; i > 0; --i) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i - 1]) <= 0) --k;
    hull[k++] = pts[i - 1];
  }
  hull.resize(k - 1);
  return hull;
}

double polygon_area(const std::vector<std::array<double, 2>> & poly)
{
  double a = 0;
  for (size_t i = 0; i < poly.size(); ++i) {
    const auto & p = poly[i];
    const auto & q = poly[(i + 1) % poly.size()];
    a += p[0] * q[1] - q[0] * p[1];
  }
  return std::abs(a) / 2;
}

bool inside_convex(const std::vector<std::array<double, 2>> & hull, double x, double y)
{
  // Hull is CCW; a point is inside when it is left of every edge.
  for (size_t i = 0; i < hull.size(); ++i) {
    const auto & p = hull[i];
    const auto & q = hull[(i + 1) % hull.size()];
    if ((q[0] - p[0]) * (y - p[1]) - (q[1] - p[1]) * (x - p[0]) < 0) return false;
  }
  return true;
}

std::array<Vec3, 8> box_corners_3d(const Box3D & b)
{
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  std::array<Vec3, 8> out;
  int i = 0;
  for (int zi : {-1, 1}) {
    for (int yi : {-1, 1}) {
      for (int xi : {-1, 1}) {
        const double lx = xi * b.l / 2, ly = yi * b.w / 2, lz = zi * b.h / 2;
        out[i++] = Vec3{b.x + c * lx - s * ly, b.y + s * lx + c * ly, b.z + lz};
      }
    }
  }
  return out;
}

}  // namespace

Image read_ppm(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: not a P6 file: " + path);
  auto next_int = [&](const char * what) {
    // Skips whitespace and '#' comment lines between header fields.
    for (;;) {
      int c = in.peek();
      if (c == '#') {
        std::string junk;
        std::getline(in, junk);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    int64_t v = -1;
    in >> v;
    if (!in || v < 0) throw std::runtime_error(std::string("read_ppm: bad ") + what + " in " + path);
    return v;
  };
  Image img;
  img.width = next_int("width");
  img.height = next_int("height");
  const int64_t maxval = next_int("maxval");
  if (maxval != 255) throw std::runtime_error("read_ppm: only maxval 255 supported: " + path);
  in.get();  // single whitespace byte before the raster
  img.rgb.resize(size_t(img.width * img.height * 3));
  in.read(reinterpret_cast<char *>(img.rgb.data()), std::streamsize(img.rgb.size()));
  if (in.gcount() != std::streamsize(img.rgb.size())) {
    throw std::runtime_error("read_ppm: truncated raster in " + path);
  }
  return img;
}

void write_ppm(const std::string & path, const Image & image)
{
  if (image.rgb.size() != size_t(image.width * image.height * 3)) {
    throw std::invalid_argument("write_ppm: raster size does not match dimensions");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char *>(image.rgb.data()), std::streamsize(image.rgb.size()));
  if (!out) throw std::runtime_error("write_ppm: write failed: " + path);
}

Tensor image_to_tensor(const Image & image)
{
  const int64_t h = image.height, w = image.width;
  std::vector<Scalar> data(size_t(3 * h * w));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t c = 0; c < 3; ++c) {
        data[size_t((c * h + y) * w + x)] =
          Scalar(image.rgb[size_t((y * w + x) * 3 + c)]) / Scalar(255);
      }
    }
  }
  return Tensor::from_data({3, h, w}, std::move(data));
}

ObjectLabel parse_kitti_label_line(const std::string & line, const Calibration & calib)
{
  std::istringstream ss(line);
  ObjectLabel label;
  double h = 0, w = 0, l = 0, xc = 0, yc = 0, zc = 0, ry = 0;
  ss >> label.type >> label.truncation >> label.occlusion >> label.alpha >> label.bbox[0] >>
    label.bbox[1] >> label.bbox[2] >> label.bbox[3] >> h >> w >> l >> xc >> yc >> zc >> ry;
  if (!ss) throw std::runtime_error("parse_kitti_label_line: malformed line: " + line);
  double score = 0;
  if (ss >> score) {
    label.has_score = true;
    label.score = score;
  }
  // KITTI stores the bottom-center in the rectified camera frame.
  const Vec3 bottom = calib.rect_to_lidar(Vec3{xc, yc, zc});
  label.box = Box3D(bottom.x, bottom.y, bottom.z + h / 2, l, w, h, -ry - M_PI / 2);
  return label;
}

std::string format_kitti_label_line(const ObjectLabel & label, const Calibration & calib)
{
  const Box3D & b = label.box;
  const Vec3 bottom = calib.lidar_to_rect(Vec3{b.x, b.y, b.z - b.h / 2});
  const double ry = wrap_angle(-b.yaw - M_PI / 2);
  std::ostringstream out;
  out << label.type << " " << fmt2(label.truncation) << " " << label.occlusion << " "
      << fmt2(label.alpha) << " " << fmt2(label.bbox[0]) << " " << fmt2(label.bbox[1]) << " "
      << fmt2(label.bbox[2]) << " " << fmt2(label.bbox[3]) << " " << fmt2(b.h) << " " << fmt2(b.w)
      << " " << fmt2(b.l) << " " << fmt2(bottom.x) << " " << fmt2(bottom.y) << " " << fmt2(bottom.z)
      << " " << fmt2(ry);
  if (label.has_score) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", label.score);
    out << " " << buf;
  }
  return out.str();
}

std::vector<ObjectLabel> read_kitti_label(const std::string & path, const Calibration & calib)
{
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_kitti_label: cannot open " + path);
  std::vector<ObjectLabel> out;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse_kitti_label_line(line, calib));
    } catch (const std::exception & e) {
      throw std::runtime_error(
        "read_kitti_label: " + path + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_kitti_label(
  const std::string & path, const std::vector<ObjectLabel> & labels, const Calibration & calib)
{
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_kitti_label: cannot open " + path);
  for (const ObjectLabel & l : labels) {
    out << format_kitti_label_line(l, calib) << "\n";
  }
}

void write_detections(
  const std::string & path, const std::vector<ObjectLabel> & labels, const Calibration & calib)
{
  std::vector<ObjectLabel> with_scores = labels;
  for (ObjectLabel & l : with_scores) l.has_score = true;
  write_kitti_label(path, with_scores, calib);
}

GtAnnotation to_annotation(const ObjectLabel & label)
{
  GtAnnotation gt;
  gt.box = label.box;
  gt.bbox_height_px = label.bbox[3] - label.bbox[1];
  gt.occlusion = label.occlusion;
  gt.truncation = label.truncation;
  return gt;
}

void SyntheticConfig::validate() const
{
  if (scene_count < 0 || min_boxes < 0 || max_boxes < min_boxes) {
    throw std::invalid_argument("SyntheticConfig: invalid scene/box counts");
  }
  if (lidar_channels <= 0 || azimuth_steps <= 0) {
    throw std::invalid_argument("SyntheticConfig: invalid ray pattern");
  }
  if (dropout < 0 || dropout > 1) {
    throw std::invalid_argument("SyntheticConfig: dropout must be in [0,1]");
  }
  if (image_width <= 0 || image_height <= 0) {
    throw std::invalid_argument("SyntheticConfig: invalid image size");
  }
  if (forward_range[0] >= forward_range[1] || forward_range[0] <= 0) {
    throw std::invalid_argument("SyntheticConfig: invalid forward range");
  }
}

Calibration canonical_calibration(int64_t width, int64_t height)
{
  Calibration c;
  const double f = 0.866 * double(width);
  c.P = {f, 0, double(width) / 2, 0, 0, f, double(height) / 2, 0, 0, 0, 1, 0};
  c.R0 = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  c.Tr = {0, -1, 0, 0, 0, 0, -1, 0, 1, 0, 0, 0};
  return c;
}

Scene generate_scene(const SyntheticConfig & config, int64_t index)
{
  config.validate();
  SceneRng rng(mix64(config.seed) ^ mix64(uint64_t(index) * 0xD1B54A32D192ED03ULL));
  Scene scene;
  scene.calib = canonical_calibration(config.image_width, config.image_height);

  // Non-overlapping placement in the camera frustum, bounded retries.
  const int64_t target = rng.uniform_int(config.min_boxes, config.max_boxes);
  std::vector<Box3D> boxes;
  const double half_fov_tan = std::tan(M_PI / 6) * 0.92;  // keep clear of the image border
  for (int64_t b = 0; b < target; ++b) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const double l = rng.uniform(config.length_range[0], config.length_range[1]);
      const double w = rng.uniform(config.width_range[0], config.width_range[1]);
      const double h = rng.uniform(config.height_range[0], config.height_range[1]);
      const double x = rng.uniform(config.forward_range[0], config.forward_range[1]);
      const double y_span = std::min(config.lateral_limit, x * half_fov_tan - 2.0);
      if (y_span <= 0) continue;
      const double y = rng.uniform(-y_span, y_span);
      const double yaw = rng.uniform(-M_PI, M_PI);
      Box3D cand(x, y, config.ground_z + h / 2, l, w, h, yaw);
      bool overlap = false;
      for (const Box3D & other : boxes) {
        // Separation margin: no BEV contact and a distance buffer.
        const double dx = cand.x - other.x, dy = cand.y - other.y;
        if (bev_iou(cand, other) > 0 || dx * dx + dy * dy < 9.0) {
          overlap = true;
          break;
        }
      }
      if (!overlap) {
        boxes.push_back(cand);
        placed = true;
      }
    }
    if (!placed && int64_t(boxes.size()) < config.min_boxes) {
      throw std::runtime_error("generate_scene: box placement failed after bounded retries");
    }
  }

  std::vector<double> albedo(boxes.size());
  std::vector<bool> dropped(boxes.size());
  for (size_t b = 0; b < boxes.size(); ++b) {
    albedo[b] = rng.uniform(0.35, 0.9);
    dropped[b] = rng.uniform(0, 1) < config.dropout;
  }

  // LiDAR: channels x azimuth rays across the camera FOV, nearest hit among
  // ground plane and boxes; dropped objects return nothing.
  const double az_lo = -M_PI / 6, az_hi = M_PI / 6;
  const double el_lo = -0.30, el_hi = 0.05;
  for (int64_t ch = 0; ch < config.lidar_channels; ++ch) {
    const double el =
      el_lo + (el_hi - el_lo) * (config.lidar_channels == 1
                                   ? 0.5
                                   : double(ch) / double(config.lidar_channels - 1));
    for (int64_t a = 0; a < config.azimuth_steps; ++a) {
      const double az = az_lo + (az_hi - az_lo) * (double(a) + 0.5) / double(config.azimuth_steps);
      const Vec3 dir{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
      HitRecord best;
      if (dir.z < -kRayEps) {
        const double t = config.ground_z / dir.z;
        if (t > 0 && t < 90.0) best = {t, -1};
      }
      for (size_t b = 0; b < boxes.size(); ++b) {
        double t = 0;
        if (ray_box_hit(dir, boxes[b], t) && (best.t < 0 || t < best.t)) {
          best = {t, int(b)};
        }
      }
      if (best.t < 0) continue;
      if (best.box >= 0 && dropped[size_t(best.box)]) continue;
      const float refl = best.box < 0 ? 0.2f : float(albedo[size_t(best.box)]);
      LidarPoint p;
      p.x = float(dir.x * best.t);
      p.y = float(dir.y * best.t);
      p.z = float(dir.z * best.t);
      p.reflectance = refl;
      scene.cloud.push_back(p);
    }
  }

  // Image: textured background, then far-to-near painted box silhouettes.
  const int64_t W = config.image_width, H = config.image_height;
  scene.image.width = W;
  scene.image.height = H;
  scene.image.rgb.resize(size_t(W * H * 3));
  const uint64_t tex_seed = mix64(config.seed ^ 0x517CC1B727220A95ULL) ^ uint64_t(index);
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x) {
      const uint64_t hsh = mix64(tex_seed ^ (uint64_t(y) << 32) ^ uint64_t(x));
      const uint8_t noise = uint8_t(hsh & 31);
      // Sky fades to ground across the horizon row.
      const uint8_t base = uint8_t(y * 2 < H ? 140 : 90);
      uint8_t * px = &scene.image.rgb[size_t((y * W + x) * 3)];
      px[0] = uint8_t(base + noise);
      px[1] = uint8_t(base + ((hsh >> 8) & 31));
      px[2] = uint8_t(base + ((hsh >> 16) & 31));
    }
  }

  std::vector<size_t> order(boxes.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return boxes[a].x > boxes[b].x;  // far first
  });
  std::vector<int> owner(size_t(W * H), -1);
  std::vector<int64_t> painted(boxes.size(), 0);
  std::vector<double> truncation(boxes.size(), 0);
  std::vector<std::array<double, 4>> bboxes(boxes.size(), {0, 0, 0, 0});
  std::vector<bool> in_view(boxes.size(), false);
  for (size_t bi : order) {
    std::vector<std::array<double, 2>> proj;
    for (const Vec3 & c3 : box_corners_3d(boxes[bi])) {
      const PixelProjection pp = project_point(c3, scene.calib);
      if (pp.depth > 0.1) proj.push_back({pp.u, pp.v});
    }
    if (proj.size() < 3) continue;  // behind the camera: zero painted pixels
    const auto hull = convex_hull(proj);
    if (hull.size() < 3) continue;
    const double full_area = polygon_area(hull);
    const std::vector<std::array<double, 2>> image_rect = {
      {0, 0}, {double(W), 0}, {double(W), double(H)}, {0, double(H)}};
    const double clipped_area = convex_intersection_area(hull, image_rect);
    if (full_area <= 0 || clipped_area <= 0) continue;
    in_view[bi] = true;
    truncation[bi] = std::clamp(1.0 - clipped_area / full_area, 0.0, 1.0);
    double u0 = 1e18, v0 = 1e18, u1 = -1e18, v1 = -1e18;
    for (const auto & p : hull) {
      u0 = std::min(u0, p[0]);
      v0 = std::min(v0, p[1]);
      u1 = std::max(u1, p[0]);
      v1 = std::max(v1, p[1]);
    }
    bboxes[bi] = {
      std::clamp(u0, 0.0, double(W - 1)), std::clamp(v0, 0.0, double(H - 1)),
      std::clamp(u1, 0.0, double(W - 1)), std::clamp(v1, 0.0, double(H - 1))};
    const double shade = albedo[bi];
    const int64_t px0 = std::max<int64_t>(0, int64_t(std::floor(u0)));
    const int64_t py0 = std::max<int64_t>(0, int64_t(std::floor(v0)));
    const int64_t px1 = std::min<int64_t>(W - 1, int64_t(std::ceil(u1)));
    const int64_t py1 = std::min<int64_t>(H - 1, int64_t(std::ceil(v1)));
    for (int64_t y = py0; y <= py1; ++y) {
      for (int64_t x = px0; x <= px1; ++x) {
        if (!inside_convex(hull, double(x) + 0.5, double(y) + 0.5)) continue;
        owner[size_t(y * W + x)] = int(bi);
        ++painted[bi];
        uint8_t * px = &scene.image.rgb[size_t((y * W + x) * 3)];
        px[0] = uint8_t(40 + shade * 180);
        px[1] = uint8_t(30 + shade * 150);
        px[2] = uint8_t(50 + shade * 160);
      }
    }
  }
  std::vector<int64_t> visible(boxes.size(), 0);
  for (int o : owner) {
    if (o >= 0) ++visible[size_t(o)];
  }

  for (size_t bi = 0; bi < boxes.size(); ++bi) {
    ObjectLabel label;
    label.box = boxes[bi];
    if (!in_view[bi] || painted[bi] == 0) {
      // Out of view: ignored by every difficulty bucket.
      label.occlusion = 3;
      label.truncation = 1.0;
    } else {
      const double occluded = 1.0 - double(visible[bi]) / double(painted[bi]);
      label.occlusion = occluded <= 0.1 ? 0 : (occluded <= 0.5 ? 1 : 2);
      label.truncation = truncation[bi];
      label.bbox = bboxes[bi];
    }
    const Vec3 rect = scene.calib.lidar_to_rect(Vec3{label.box.x, label.box.y, label.box.z});
    const double ry = wrap_angle(-label.box.yaw - M_PI / 2);
    label.alpha = wrap_angle(ry - std::atan2(rect.x, rect.z));
    scene.labels.push_back(label);
  }
  return scene;
}

FramePaths frame_paths(const std::string & root, int64_t index)
{
  char num[16];
  std::snprintf(num, sizeof(num), "%06lld", static_cast<long long>(index));
  FramePaths p;
  p.image = root + "/image_2/" + num + ".ppm";
  p.velodyne = root + "/velodyne/" + num + ".bin";
  p.calib = root + "/calib/" + num + ".txt";
  p.label = root + "/label_2/" + num + ".txt";
  return p;
}

Scene load_kitti_frame(const FramePaths & paths)
{
  Scene scene;
  std::ifstream calib_in(paths.calib);
  if (!calib_in) throw std::runtime_error("load_kitti_frame: cannot open " + paths.calib);
  std::stringstream buf;
  buf << calib_in.rdbuf();
  scene.calib = Calibration::parse_kitti(buf.str());
  scene.image = read_ppm(paths.image);
  scene.cloud = read_velodyne(paths.velodyne);
  if (!paths.label.empty() && std::filesystem::exists(paths.label)) {
    scene.labels = read_kitti_label(paths.label, scene.calib);
  }
  return scene;
}

void write_scene(const std::string & root, int64_t index, const Scene & scene)
{
  for (const char * sub : {"image_2", "velodyne", "calib", "label_2"}) {
    std::filesystem::create_directories(root + "/" + sub);
  }
  const FramePaths p = frame_paths(root, index);
  write_ppm(p.image, scene.image);
  write_velodyne(p.velodyne, scene.cloud);
  std::ofstream calib_out(p.calib);
  if (!calib_out) throw std::runtime_error("write_scene: cannot open " + p.calib);
  calib_out << scene.calib.to_kitti();
  write_kitti_label(p.label, scene.labels, scene.calib);
}

int64_t generate_dataset(const SyntheticConfig & config, const std::string & root)
{
  config.validate();
  for (int64_t i = 0; i < config.scene_count; ++i) {
    write_scene(root, i, generate_scene(config, i));
  }
  return config.scene_count;
}

int64_t count_frames(const std::string & root)
{
  int64_t n = 0;
  while (std::filesystem::exists(frame_paths(root, n).velodyne)) ++n;
  return n;
}

}  // namespace fusiondet
