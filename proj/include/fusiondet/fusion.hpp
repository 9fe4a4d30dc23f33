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

#ifndef FUSIONDET_FUSION_HPP_
#define FUSIONDET_FUSION_HPP_

#include <optional>
#include <string>

#include "fusiondet/nn.hpp"

namespace fusiondet
{

struct FusionConfig
{
  int64_t img_channels = 128;    // C'
  int64_t lidar_channels = 128;  // C
  int64_t fused_channels = 256;  // C' + C per the implementation settings
  int mmfd = 1;                  // fusion-module depth: blocks at 1 or 2 encoder levels
  int mmfl = 1;                  // fusion-module length: attention pairs in sequence
  bool use_attention = true;     // false = simple concatenation (SC)
  bool use_decoder = true;       // false = no joint-feature-generation conv (pre-JFG)

  void validate() const;
};

/// Channel concatenation of the two modality volumes. Pure, lossless.
Tensor fuse_concat(const Tensor & img_volume, const Tensor & lidar_volume);

/// Gated attention pair at one level: cross-modality gate*value followed by
/// a residual block and self-gating multi-modality attention.
class FusionBlock
{
public:
  FusionBlock(
    ParamStore & params, const std::string & name, int64_t in_ch, int64_t fused_ch, int mmfl,
    Rng & rng);

  Tensor cross_attention(const Tensor & fused) const;
  Tensor residual(const Tensor & x) const;
  Tensor multi_attention(const Tensor & x) const;
  /// Full pass: mmfl repetitions of (cross -> residual -> multi).
  Tensor forward(const Tensor & fused) const;

private:
  struct Pair
  {
    Conv3dLayer gate;
    Conv3dLayer value;
    Conv3dLayer res_a;
    Conv3dLayer res_b;
    Conv3dLayer self_gate;
  };
  std::vector<Pair> pairs_;
};

/// Decoder: one 3x3x3 conv + ReLU, then depth-to-channel flattening and a
/// 1x1 reduction to `out_ch`, producing the 2D head input [out_ch x H x W].
class FusionDecoder
{
public:
  FusionDecoder(
    ParamStore & params, const std::string & name, int64_t in_ch, int64_t depth, int64_t out_ch,
    bool with_conv, Rng & rng);

  Tensor forward(const Tensor & volume) const;

private:
  Conv3dLayer conv_;
  Conv3dLayer reduce_;
  bool with_conv_;
  int64_t depth_;
};

/// The full fusion module across encoder levels.
class FusionModule
{
public:
  /// `depth` is the final-level volume depth D (the decoder flattens it).
  FusionModule(
    ParamStore & params, const std::string & name, FusionConfig config, int64_t depth, Rng & rng);

  /// final/penultimate volumes per modality; the penultimate pair may be
  /// undefined when mmfd == 1.
  Tensor forward(
    const Tensor & img_final, const Tensor & lidar_final, const Tensor & img_penultimate,
    const Tensor & lidar_penultimate) const;

  const FusionConfig & config() const { return config_; }

private:
  FusionConfig config_;
  std::optional<FusionBlock> block_final_;        // absent in SC mode
  std::optional<FusionBlock> block_penultimate_;  // mmfd == 2 only
  std::optional<Conv3dLayer> merge_down_;         // stride (2,1,1) second-level merge
  FusionDecoder decoder_;
};

}  // namespace fusiondet

#endif  // FUSIONDET_FUSION_HPP_
