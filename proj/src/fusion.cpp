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

#include "fusiondet/fusion.hpp"

#include <stdexcept>

#include "fusiondet/ops.hpp"

namespace fusiondet
{

void FusionConfig::validate() const
{
  if (img_channels <= 0 || lidar_channels <= 0 || fused_channels <= 0) {
    throw std::invalid_argument("FusionConfig: channel widths must be positive");
  }
  if (mmfd != 1 && mmfd != 2) {
    throw std::invalid_argument("FusionConfig: mmfd must be 1 or 2");
  }
  if (mmfl != 1 && mmfl != 2) {
    throw std::invalid_argument("FusionConfig: mmfl must be 1 or 2");
  }
}

Tensor fuse_concat(const Tensor & img_volume, const Tensor & lidar_volume)
{
  const auto & a = img_volume.shape();
  const auto & b = lidar_volume.shape();
  if (a.size() != 4 || b.size() != 4 || a[1] != b[1] || a[2] != b[2] || a[3] != b[3]) {
    throw std::invalid_argument(
      "fuse_concat: volume extents differ: " + shape_str(a) + " vs " + shape_str(b));
  }
  return concat_channels({img_volume, lidar_volume});
}

FusionBlock::FusionBlock(
  ParamStore & params, const std::string & name, int64_t in_ch, int64_t fused_ch, int mmfl,
  Rng & rng)
{
  int64_t ch = in_ch;
  for (int i = 0; i < mmfl; ++i) {
    const std::string p = name + ".pair" + std::to_string(i);
    Pair pair;
    pair.gate = Conv3dLayer(params, p + ".gate", ch, fused_ch, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, rng);
    pair.value =
      Conv3dLayer(params, p + ".value", ch, fused_ch, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, rng);
    pair.res_a =
      Conv3dLayer(params, p + ".res_a", fused_ch, fused_ch, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, rng);
    pair.res_b =
      Conv3dLayer(params, p + ".res_b", fused_ch, fused_ch, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, rng);
    pair.self_gate = Conv3dLayer(
      params, p + ".self_gate", fused_ch, fused_ch, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, rng);
    pairs_.push_back(std::move(pair));
    ch = fused_ch;
  }
}

Tensor FusionBlock::cross_attention(const Tensor & fused) const
{
  const Pair & p = pairs_[0];
  return mul(sigmoid(p.gate(fused)), p.value(fused));
}

Tensor FusionBlock::residual(const Tensor & x) const
{
  const Pair & p = pairs_[0];
  return relu(add(x, p.res_b(relu(p.res_a(x)))));
}

Tensor FusionBlock::multi_attention(const Tensor & x) const
{
  const Pair & p = pairs_[0];
  return mul(sigmoid(p.self_gate(x)), x);
}

Tensor FusionBlock::forward(const Tensor & fused) const
{
  Tensor x = fused;
  for (const Pair & p : pairs_) {
    Tensor crossed = mul(sigmoid(p.gate(x)), p.value(x));
    Tensor smoothed = relu(add(crossed, p.res_b(relu(p.res_a(crossed)))));
    x = mul(sigmoid(p.self_gate(smoothed)), smoothed);
  }
  return x;
}

FusionDecoder::FusionDecoder(
  ParamStore & params, const std::string & name, int64_t in_ch, int64_t depth, int64_t out_ch,
  bool with_conv, Rng & rng)
: with_conv_(with_conv), depth_(depth)
{
  if (with_conv_) {
    conv_ = Conv3dLayer(params, name + ".conv", in_ch, in_ch, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, rng);
  }
  reduce_ = Conv3dLayer(
    params, name + ".reduce", in_ch * depth, out_ch, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, rng);
}

Tensor FusionDecoder::forward(const Tensor & volume) const
{
  if (volume.shape()[1] != depth_) {
    throw std::invalid_argument(
      "FusionDecoder: depth " + std::to_string(volume.shape()[1]) + " != configured " +
      std::to_string(depth_));
  }
  Tensor x = volume;
  if (with_conv_) {
    x = relu(conv_(x));
  }
  // Depth-to-channel: [C x D x H x W] row-major reads as [C*D x H x W].
  Tensor flat = reshape(x, {x.shape()[0] * depth_, 1, x.shape()[2], x.shape()[3]});
  Tensor reduced = reduce_(flat);
  return reshape(reduced, {reduced.shape()[0], reduced.shape()[2], reduced.shape()[3]});
}

FusionModule::FusionModule(
  ParamStore & params, const std::string & name, FusionConfig config, int64_t depth, Rng & rng)
: config_(config),
  decoder_(
    params, name + ".decoder",
    config.use_attention ? config.fused_channels : config.img_channels + config.lidar_channels,
    depth, config.fused_channels, config.use_decoder, rng)
{
  config_.validate();
  const int64_t in_ch = config_.img_channels + config_.lidar_channels;
  if (config_.use_attention) {
    block_final_.emplace(params, name + ".level0", in_ch, config_.fused_channels, config_.mmfl, rng);
  } else if (config_.mmfd == 2) {
    throw std::invalid_argument("FusionModule: mmfd=2 requires attention enabled");
  }
  if (config_.mmfd == 2) {
    block_penultimate_.emplace(
      params, name + ".level1", in_ch, config_.fused_channels, config_.mmfl, rng);
    merge_down_.emplace(
      params, name + ".merge_down", config_.fused_channels, config_.fused_channels,
      std::array<int64_t, 3>{3, 3, 3}, std::array<int64_t, 3>{2, 1, 1},
      std::array<int64_t, 3>{1, 1, 1}, rng);
  }
}

Tensor FusionModule::forward(
  const Tensor & img_final, const Tensor & lidar_final, const Tensor & img_penultimate,
  const Tensor & lidar_penultimate) const
{
  Tensor fused = fuse_concat(img_final, lidar_final);
  Tensor level_final = block_final_ ? block_final_->forward(fused)
                                    : fused;  // SC: plain concatenation
  if (config_.mmfd == 2) {
    if (!img_penultimate.defined() || !lidar_penultimate.defined()) {
      throw std::invalid_argument(
        "FusionModule: mmfd=2 requires penultimate encoder levels");
    }
    Tensor fused2 = fuse_concat(img_penultimate, lidar_penultimate);
    Tensor level2 = block_penultimate_->forward(fused2);
    Tensor merged = relu((*merge_down_)(level2));
    level_final = add(level_final, merged);
  }
  return decoder_.forward(level_final);
}

}  // namespace fusiondet
