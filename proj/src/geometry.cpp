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

#include "fusiondet/geometry.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace fusiondet
{

void Calibration::validate() const
{
  // R0 * R0^T must be the identity within 1e-6.
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0;
      for (int k = 0; k < 3; ++k) {
        dot += R0[i * 3 + k] * R0[j * 3 + k];
      }
      const double expect = (i == j) ? 1.0 : 0.0;
      if (std::abs(dot - expect) > 1e-6) {
        throw std::invalid_argument("calibration R0_rect is not orthonormal");
      }
    }
  }
}

namespace
{

std::array<double, 12> parse_floats_12(std::istringstream & is, const std::string & key)
{
  std::array<double, 12> out{};
  for (double & v : out) {
    if (!(is >> v)) {
      throw std::runtime_error("calib parse error: expected 12 floats after " + key);
    }
  }
  return out;
}

}  // namespace

Calibration Calibration::parse_kitti(const std::string & text)
{
  Calibration c;
  bool have_p = false, have_r = false, have_tr = false;
  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    std::istringstream is(line);
    std::string key;
    if (!(is >> key)) continue;
    if (key == "P2:") {
      c.P = parse_floats_12(is, "P2");
      have_p = true;
    } else if (key == "R0_rect:") {
      for (double & v : c.R0) {
        if (!(is >> v)) {
          throw std::runtime_error(
            "calib parse error at line " + std::to_string(line_no) + ": expected 9 floats");
        }
      }
      have_r = true;
    } else if (key == "Tr_velo_to_cam:") {
      c.Tr = parse_floats_12(is, "Tr_velo_to_cam");
      have_tr = true;
    }
  }
  if (!have_p || !have_r || !have_tr) {
    throw std::runtime_error("calib parse error: missing P2, R0_rect or Tr_velo_to_cam");
  }
  c.validate();
  return c;
}

std::string Calibration::to_kitti() const
{
  std::ostringstream os;
  os << std::setprecision(17);
  os << "P2:";
  for (double v : P) os << " " << v;
  os << "\nR0_rect:";
  for (double v : R0) os << " " << v;
  os << "\nTr_velo_to_cam:";
  for (double v : Tr) os << " " << v;
  os << "\n";
  return os.str();
}

Vec3 Calibration::lidar_to_rect(const Vec3 & p) const
{
  const double cx = Tr[0] * p.x + Tr[1] * p.y + Tr[2] * p.z + Tr[3];
  const double cy = Tr[4] * p.x + Tr[5] * p.y + Tr[6] * p.z + Tr[7];
  const double cz = Tr[8] * p.x + Tr[9] * p.y + Tr[10] * p.z + Tr[11];
  Vec3 r;
  r.x = R0[0] * cx + R0[1] * cy + R0[2] * cz;
  r.y = R0[3] * cx + R0[4] * cy + R0[5] * cz;
  r.z = R0[6] * cx + R0[7] * cy + R0[8] * cz;
  return r;
}

Vec3 Calibration::rect_to_lidar(const Vec3 & p) const
{
  // R0 inverse = transpose; Tr inverse applied explicitly.
  const double cx = R0[0] * p.x + R0[3] * p.y + R0[6] * p.z;
  const double cy = R0[1] * p.x + R0[4] * p.y + R0[7] * p.z;
  const double cz = R0[2] * p.x + R0[5] * p.y + R0[8] * p.z;
  const double tx = cx - Tr[3];
  const double ty = cy - Tr[7];
  const double tz = cz - Tr[11];
  Vec3 l;
  l.x = Tr[0] * tx + Tr[4] * ty + Tr[8] * tz;
  l.y = Tr[1] * tx + Tr[5] * ty + Tr[9] * tz;
  l.z = Tr[2] * tx + Tr[6] * ty + Tr[10] * tz;
  return l;
}

PixelProjection project_point(const Vec3 & point, const Calibration & calib)
{
  const Vec3 r = calib.lidar_to_rect(point);
  PixelProjection out;
  out.depth = r.z;
  if (r.z <= 0) {
    out.valid = false;
    return out;
  }
  const double u = calib.P[0] * r.x + calib.P[1] * r.y + calib.P[2] * r.z + calib.P[3];
  const double v = calib.P[4] * r.x + calib.P[5] * r.y + calib.P[6] * r.z + calib.P[7];
  const double w = calib.P[8] * r.x + calib.P[9] * r.y + calib.P[10] * r.z + calib.P[11];
  out.u = u / w;
  out.v = v / w;
  out.valid = true;
  return out;
}

std::vector<PixelProjection> project_lidar_to_image(
  const std::vector<Vec3> & points, const Calibration & calib)
{
  std::vector<PixelProjection> out;
  out.reserve(points.size());
  for (const Vec3 & p : points) {
    out.push_back(project_point(p, calib));
  }
  return out;
}

Vec3 VolumeSpec::cell_center(int64_t ix, int64_t iy, int64_t iz) const
{
  Vec3 c;
  c.x = range_min[0] + (double(ix) + 0.5) * cell(0);
  c.y = range_min[1] + (double(iy) + 0.5) * cell(1);
  c.z = range_min[2] + (double(iz) + 0.5) * cell(2);
  return c;
}

bool VolumeSpec::cell_of(const Vec3 & p, std::array<int64_t, 3> & out) const
{
  const double coords[3] = {p.x, p.y, p.z};
  for (int a = 0; a < 3; ++a) {
    const int64_t i = int64_t(std::floor((coords[a] - range_min[a]) / cell(a)));
    if (i < 0 || i >= extent[a]) return false;
    out[a] = i;
  }
  return true;
}

void VolumeSpec::validate() const
{
  for (int a = 0; a < 3; ++a) {
    if (extent[a] <= 0) {
      throw std::invalid_argument("volume extent must be positive");
    }
    if (range_max[a] <= range_min[a]) {
      throw std::invalid_argument("volume range must be non-empty");
    }
  }
}

Tensor gather_pixels(const Tensor & map, const std::vector<int64_t> & flat_pixel, int64_t hw)
{
  if (map.shape().size() != 3) {
    throw std::invalid_argument("gather_pixels: expected [CxHxW] map");
  }
  const int64_t c = map.shape()[0];
  if (map.shape()[1] * map.shape()[2] != hw) {
    throw std::invalid_argument("gather_pixels: hw mismatch");
  }
  const int64_t n = static_cast<int64_t>(flat_pixel.size());
  std::vector<Scalar> out(static_cast<size_t>(c * n), Scalar(0));
  for (int64_t i = 0; i < n; ++i) {
    const int64_t px = flat_pixel[static_cast<size_t>(i)];
    if (px < 0) continue;
    if (px >= hw) {
      throw std::out_of_range("gather_pixels: pixel index out of range");
    }
    for (int64_t ch = 0; ch < c; ++ch) {
      out[static_cast<size_t>(ch * n + i)] = map.data()[static_cast<size_t>(ch * hw + px)];
    }
  }
  auto idx = std::make_shared<std::vector<int64_t>>(flat_pixel);
  return make_node({c, n}, std::move(out), {map}, [idx, c, n, hw](TensorImpl & self) {
    TensorImpl & p = *self.parents[0];
    if (!p.requires_grad && !p.backward_fn) return;
    p.ensure_grad();
    for (int64_t i = 0; i < n; ++i) {
      const int64_t px = (*idx)[static_cast<size_t>(i)];
      if (px < 0) continue;
      for (int64_t ch = 0; ch < c; ++ch) {
        p.grad[static_cast<size_t>(ch * hw + px)] += self.grad[static_cast<size_t>(ch * n + i)];
      }
    }
  });
}

Tensor apply_cell_mask(const Tensor & volume, const std::vector<uint8_t> & mask)
{
  const int64_t c = volume.shape()[0];
  const int64_t cells = volume.numel() / c;
  if (static_cast<int64_t>(mask.size()) != cells) {
    throw std::invalid_argument("apply_cell_mask: mask length mismatch");
  }
  std::vector<Scalar> out = volume.data();
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t i = 0; i < cells; ++i) {
      if (!mask[static_cast<size_t>(i)]) {
        out[static_cast<size_t>(ch * cells + i)] = Scalar(0);
      }
    }
  }
  auto m = std::make_shared<std::vector<uint8_t>>(mask);
  return make_node(volume.shape(), std::move(out), {volume}, [m, c, cells](TensorImpl & self) {
    TensorImpl & p = *self.parents[0];
    if (!p.requires_grad && !p.backward_fn) return;
    p.ensure_grad();
    for (int64_t ch = 0; ch < c; ++ch) {
      for (int64_t i = 0; i < cells; ++i) {
        if ((*m)[static_cast<size_t>(i)]) {
          p.grad[static_cast<size_t>(ch * cells + i)] +=
            self.grad[static_cast<size_t>(ch * cells + i)];
        }
      }
    }
  });
}

ImageLifter::ImageLifter(
  ParamStore & params, const std::string & name, std::vector<int64_t> level_channels,
  int64_t out_ch, Rng & rng)
: level_channels_(std::move(level_channels)), out_ch_(out_ch)
{
  if (level_channels_.empty()) {
    throw std::invalid_argument("ImageLifter: empty feature-map level list");
  }
  int64_t total = 0;
  for (int64_t c : level_channels_) total += c;
  reduce_ = Conv3dLayer(params, name + ".reduce", total, out_ch, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, rng);
}

namespace
{

struct AnchorProjection
{
  std::vector<uint8_t> mask;
  // Per level: flat pixel index per anchor, -1 when masked out.
  std::vector<std::vector<int64_t>> pixels;
};

AnchorProjection project_anchors(
  const std::vector<FeatureLevel> & levels, const Calibration & calib, const VolumeSpec & spec,
  std::array<int64_t, 2> image_size)
{
  const int64_t X = spec.extent[0], Y = spec.extent[1], Z = spec.extent[2];
  const int64_t n = X * Y * Z;
  AnchorProjection out;
  out.mask.assign(static_cast<size_t>(n), 0);
  out.pixels.assign(levels.size(), std::vector<int64_t>(static_cast<size_t>(n), -1));
  int64_t flat = 0;
  for (int64_t iz = 0; iz < Z; ++iz) {
    for (int64_t iy = 0; iy < Y; ++iy) {
      for (int64_t ix = 0; ix < X; ++ix, ++flat) {
        const PixelProjection p = project_point(spec.cell_center(ix, iy, iz), calib);
        // Validity is defined at level 0.
        if (!p.valid || p.u < 0 || p.u >= double(image_size[0]) || p.v < 0 ||
            p.v >= double(image_size[1])) {
          continue;
        }
        out.mask[static_cast<size_t>(flat)] = 1;
        for (size_t l = 0; l < levels.size(); ++l) {
          const int64_t w_l = levels[l].map.shape()[2];
          const int64_t h_l = levels[l].map.shape()[1];
          // Nearest sample: the pixel containing the scale-adjusted point.
          int64_t pu = int64_t(std::floor(p.u / double(levels[l].stride)));
          int64_t pv = int64_t(std::floor(p.v / double(levels[l].stride)));
          pu = std::min(pu, w_l - 1);
          pv = std::min(pv, h_l - 1);
          out.pixels[l][static_cast<size_t>(flat)] = pv * w_l + pu;
        }
      }
    }
  }
  return out;
}

}  // namespace

AnchorVolume ImageLifter::lift(
  const std::vector<FeatureLevel> & levels, const Calibration & calib, const VolumeSpec & spec,
  std::array<int64_t, 2> image_size) const
{
  if (levels.size() != level_channels_.size()) {
    throw std::invalid_argument("ImageLifter: level count mismatch");
  }
  const auto proj = project_anchors(levels, calib, spec, image_size);
  std::vector<Tensor> gathered;
  for (size_t l = 0; l < levels.size(); ++l) {
    const auto & m = levels[l].map;
    gathered.push_back(gather_pixels(m, proj.pixels[l], m.shape()[1] * m.shape()[2]));
  }
  Tensor cat = levels.size() == 1 ? gathered[0] : concat_channels(gathered);
  const int64_t X = spec.extent[0], Y = spec.extent[1], Z = spec.extent[2];
  Tensor vol = reshape(cat, {cat.shape()[0], Z, Y, X});
  Tensor reduced = reduce_(vol);
  AnchorVolume out;
  out.spec = spec;
  out.mask = proj.mask;
  out.features = apply_cell_mask(reduced, proj.mask);
  return out;
}

AnchorVolume ImageLifter::lift_single_level(
  const std::vector<FeatureLevel> & levels, const Calibration & calib, const VolumeSpec & spec,
  std::array<int64_t, 2> image_size) const
{
  if (levels.empty()) {
    throw std::invalid_argument("ImageLifter: empty feature-map level list");
  }
  if (level_channels_.size() != 1) {
    // SLim lifters are built with a single level so every parameter takes
    // part in the forward pass.
    throw std::logic_error("ImageLifter: single-level lift needs a single-level lifter");
  }
  const std::vector<FeatureLevel> finest{levels[0]};
  const auto proj = project_anchors(finest, calib, spec, image_size);
  const auto & m = finest[0].map;
  Tensor cat = gather_pixels(m, proj.pixels[0], m.shape()[1] * m.shape()[2]);
  const int64_t X = spec.extent[0], Y = spec.extent[1], Z = spec.extent[2];
  Tensor vol = reshape(cat, {cat.shape()[0], Z, Y, X});
  AnchorVolume out;
  out.spec = spec;
  out.mask = proj.mask;
  out.features = apply_cell_mask(reduce_(vol), proj.mask);
  return out;
}

}  // namespace fusiondet
