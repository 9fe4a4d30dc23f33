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
//
// Acceptance criteria needing 64-bit arithmetic: the end-to-end gradient
// check (criterion 1) and the loss-constant identities (criterion 4). One
// pass/fail line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "fusiondet/dataio.hpp"
#include "fusiondet/encoders.hpp"
#include "fusiondet/fusion.hpp"
#include "fusiondet/head.hpp"
#include "fusiondet/ops.hpp"
#include "fusiondet/voxelize.hpp"

using namespace fusiondet;

namespace
{

int failures = 0;

void report(int criterion, bool pass, const std::string & what)
{
  std::printf("criterion %d: %s - %s\n", criterion, pass ? "PASS" : "FAIL", what.c_str());
  if (!pass) ++failures;
}

// The full pipeline on micro volumes, with the image and the VFE point
// features held as graph leaves next to every parameter.
struct MicroPipeline
{
  VolumeSpec anchor_spec;
  VolumeSpec lidar_spec;
  Calibration calib;
  ParamStore params;
  ImageBackbone backbone;
  ImageLifter lifter;
  ImgEncoder img_encoder;
  VfeEncoder vfe;
  LidarEncoder lidar_encoder;
  FusionModule fusion;
  DetectionHead head;
  AnchorSet anchors;
  std::vector<Box3D> gts;
  TargetAssignment assignment;

  VoxelGrouping grouping;
  std::vector<std::vector<int64_t>> row_groups;
  Tensor image;        // 3 x 8 x 8 leaf
  Tensor point_feats;  // N x 7 leaf

  static VolumeSpec spec(std::array<int64_t, 3> extent)
  {
    VolumeSpec s;
    s.range_min = {2, -4, -3};
    s.range_max = {10, 4, 1};
    s.extent = extent;
    s.validate();
    return s;
  }

  explicit MicroPipeline(Rng & rng)
  : anchor_spec(spec({4, 4, 4})),
    lidar_spec(spec({8, 8, 8})),
    calib(canonical_calibration(8, 8)),
    backbone(params, "backbone", 1, 1, rng),
    lifter(params, "lifter", {1}, 1, rng),
    img_encoder(params, "img_enc", 1, 4, 2, rng),
    vfe(params, "vfe", 1, rng),
    lidar_encoder(params, "lidar_enc", 1, {8, 8, 8}, {4, 4, 2}, rng),
    fusion(params, "fusion", FusionConfig{1, 1, 2, 1, 1, true, true}, 2, rng),
    head(params, "head", 2, rng)
  {
    VolumeSpec bev = anchor_spec;
    bev.extent[2] = 2;
    anchors = AnchorSet::make(bev, bev.extent[1], bev.extent[0]);
    gts = {Box3D(5, -1, -1, 3.9, 1.6, 1.56, 0.25), Box3D(8, 2, -1, 3.6, 1.5, 1.5, -1.2)};
    assignment = assign_targets(anchors, gts);

    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<Scalar> pix(3 * 8 * 8);
    for (Scalar & v : pix) v = Scalar(0.5 + 0.3 * dist(rng));
    image = Tensor::from_data({3, 8, 8}, std::move(pix), true);

    PointCloud cloud;
    std::uniform_real_distribution<double> px(2.2, 9.8), py(-3.8, 3.8), pz(-2.8, 0.8);
    for (int i = 0; i < 48; ++i) {
      cloud.push_back(
        {float(px(rng)), float(py(rng)), float(pz(rng)), float(0.5 + 0.4 * dist(rng))});
    }
    grouping = dynamic_voxelize(cloud, lidar_spec);
    Tensor feats = vfe_point_features(cloud, grouping, row_groups);
    point_feats = Tensor::from_data(feats.shape(), feats.data(), true);
  }

  Tensor loss() const
  {
    const std::vector<FeatureLevel> levels = backbone.forward(image);
    const AnchorVolume volume = lifter.lift(levels, calib, anchor_spec, {8, 8});
    const ImgEncoder::Output img = img_encoder.forward(volume);
    const SparseVoxelTensor voxels = vfe.encode_rows(point_feats, row_groups, grouping);
    const LidarEncoder::Output lid = lidar_encoder.forward(voxels);
    const Tensor bev = fusion.forward(img.final, lid.final, img.penultimate, lid.penultimate);
    const HeadOutput out = head.forward(bev);
    return compute_loss(out, anchors, gts, assignment).total;
  }
};

void criterion_1()
{
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(123);
  MicroPipeline pipe(rng);

  std::vector<Tensor> leaves{pipe.image, pipe.point_feats};
  for (const auto & kv : pipe.params.items()) leaves.push_back(kv.second);
  int64_t n_params = 0;
  for (const auto & kv : pipe.params.items()) n_params += kv.second.numel();

  for (Tensor & leaf : leaves) leaf.zero_grad();
  pipe.loss().backward();

  const double step = 1e-6;
  double max_err = 0.0;
  for (Tensor & leaf : leaves) {
    const std::vector<Scalar> analytic =
      leaf.has_grad() ? leaf.grad() : std::vector<Scalar>(size_t(leaf.numel()), 0);
    for (size_t i = 0; i < leaf.data().size(); ++i) {
      const Scalar saved = leaf.data()[i];
      leaf.data()[i] = saved + Scalar(step);
      const double up = double(pipe.loss().item());
      leaf.data()[i] = saved - Scalar(step);
      const double down = double(pipe.loss().item());
      leaf.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = double(analytic[i]);
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a) + std::abs(numeric));
      max_err = std::max(max_err, err);
    }
  }
  const double seconds =
    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  char buf[256];
  std::snprintf(
    buf, sizeof(buf),
    "end-to-end gradient check: max rel err %.3g over %lld params + %lld input scalars in %.0fs",
    max_err, (long long)n_params, (long long)(pipe.image.numel() + pipe.point_feats.numel()),
    seconds);
  report(1, max_err < 1e-4 && n_params <= 2000 && seconds < 120.0, buf);
}

void criterion_4()
{
  // focal(p_t = 0.5, positive) = alpha * (1-p)^gamma * -ln p = 0.25^2 ln 2.
  const Tensor logits = Tensor::from_data({1}, {Scalar(0)});
  const double focal = double(focal_loss(logits, {1}, Scalar(0.25), Scalar(2.0)).item());
  const double focal_want = 0.25 * 0.25 * std::log(2.0);
  const bool ok_focal = std::abs(focal - focal_want) < 1e-9;

  // smooth-L1 seam: value at |x| = beta is beta/2 = 1/18 for beta = 1/9.
  const Tensor pred = Tensor::from_data({1, 1}, {Scalar(1.0 / 9.0)});
  const double seam =
    double(smooth_l1_loss(pred, {Scalar(0)}, {Scalar(1)}, Scalar(1.0 / 9.0)).item());
  const bool ok_seam = std::abs(seam - 1.0 / 18.0) < 1e-9;

  // Total combination uses the pinned 1 / 2 / 0.2 weights exactly.
  Rng rng(5);
  MicroPipeline pipe(rng);
  const std::vector<FeatureLevel> levels = pipe.backbone.forward(pipe.image);
  const AnchorVolume volume = pipe.lifter.lift(levels, pipe.calib, pipe.anchor_spec, {8, 8});
  const ImgEncoder::Output img = pipe.img_encoder.forward(volume);
  const SparseVoxelTensor voxels = pipe.vfe.encode_rows(pipe.point_feats, pipe.row_groups, pipe.grouping);
  const LidarEncoder::Output lid = pipe.lidar_encoder.forward(voxels);
  const Tensor bev = pipe.fusion.forward(img.final, lid.final, img.penultimate, lid.penultimate);
  const LossBundle bundle =
    compute_loss(pipe.head.forward(bev), pipe.anchors, pipe.gts, pipe.assignment);
  const double total = double(bundle.total.item());
  const double want = double(bundle.cls.item()) + 2.0 * double(bundle.reg.item()) +
    0.2 * double(bundle.dir.item());
  const bool ok_total = total == want;

  char buf[256];
  std::snprintf(
    buf, sizeof(buf), "loss constants: focal %.12f (want %.12f), seam %.12f, total %s",
    focal, focal_want, seam, ok_total ? "exact" : "mismatch");
  report(4, ok_focal && ok_seam && ok_total, buf);
}

}  // namespace

int main()
{
  criterion_1();
  criterion_4();
  return failures == 0 ? 0 : 1;
}
