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

#ifndef FUSIONDET_OPS_HPP_
#define FUSIONDET_OPS_HPP_

#include <array>
#include <vector>

#include "fusiondet/tensor.hpp"

namespace fusiondet
{

// ---- elementwise ----
Tensor add(const Tensor & a, const Tensor & b);
Tensor sub(const Tensor & a, const Tensor & b);
Tensor mul(const Tensor & a, const Tensor & b);
Tensor scale(const Tensor & a, Scalar s);
Tensor add_scalar(const Tensor & a, Scalar s);
Tensor relu(const Tensor & a);
Tensor sigmoid(const Tensor & a);
/// log(1 + exp(x)), evaluated in the overflow-safe branch form.
Tensor softplus(const Tensor & a);

// ---- shape ----
Tensor reshape(const Tensor & a, std::vector<int64_t> new_shape);
Tensor permute(const Tensor & a, const std::vector<size_t> & axes);
/// Concatenation along axis 0 (channel-first layout throughout the pipeline).
Tensor concat_channels(const std::vector<Tensor> & inputs);
/// Contiguous slice [begin, end) along axis 0.
Tensor slice_channels(const Tensor & a, int64_t begin, int64_t end);
/// Rows of a [N x F] matrix selected by index (with repetition allowed).
Tensor gather_rows(const Tensor & a, const std::vector<int64_t> & rows);

// ---- reductions ----
Tensor sum(const Tensor & a);
Tensor mean(const Tensor & a);
/// Weighted sum: sum_i a_i * w_i with w constant. Masked reductions in losses.
Tensor weighted_sum(const Tensor & a, const std::vector<Scalar> & weights);

// ---- dense linear algebra ----
/// x: [N x F], weight: [C x F], bias: [C] -> [N x C].
Tensor linear(const Tensor & x, const Tensor & weight, const Tensor & bias);

struct Conv3dSpec
{
  std::array<int64_t, 3> stride{1, 1, 1};
  std::array<int64_t, 3> padding{0, 0, 0};
};

/// input: [C_in x D x H x W], weight: [C_out x C_in x kd x kh x kw], bias: [C_out].
/// Output extents follow floor((E + 2p - k)/s) + 1 per axis.
Tensor conv3d(const Tensor & input, const Tensor & weight, const Tensor & bias, Conv3dSpec spec);

std::array<int64_t, 3> conv3d_output_extents(
  const std::array<int64_t, 3> & in, const std::array<int64_t, 3> & kernel, const Conv3dSpec & spec);

// ---- losses (scalar outputs) ----
/// Focal loss over sigmoid logits. label: +1 positive, 0 negative, -1 ignored.
/// Sum over non-ignored anchors divided by max(1, #positives).
Tensor focal_loss(
  const Tensor & logits, const std::vector<int> & labels, Scalar alpha, Scalar gamma);

/// Smooth-L1 between pred and constant targets, masked by `active` rows,
/// mean over active rows (sum over coordinates within a row).
Tensor smooth_l1_loss(
  const Tensor & pred, const std::vector<Scalar> & target, const std::vector<Scalar> & row_weight,
  Scalar beta);

/// Softmax cross-entropy over [N x K] logits for rows with weight > 0,
/// normalized by total weight.
Tensor softmax_cross_entropy(
  const Tensor & logits, const std::vector<int> & target, const std::vector<Scalar> & row_weight);

}  // namespace fusiondet

#endif  // FUSIONDET_OPS_HPP_
