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

#ifndef FUSIONDET_NN_HPP_
#define FUSIONDET_NN_HPP_

#include <array>
#include <random>
#include <string>

#include "fusiondet/ops.hpp"
#include "fusiondet/optim.hpp"

namespace fusiondet
{

using Rng = std::mt19937_64;

/// Uniform init in +-sqrt(1/fan_in).
Tensor uniform_param(std::vector<int64_t> shape, int64_t fan_in, Rng & rng);

struct Conv3dLayer
{
  Conv3dLayer() = default;
  Conv3dLayer(
    ParamStore & params, const std::string & name, int64_t in_ch, int64_t out_ch,
    std::array<int64_t, 3> kernel, std::array<int64_t, 3> stride, std::array<int64_t, 3> padding,
    Rng & rng);

  Tensor operator()(const Tensor & x) const;

  Tensor weight;
  Tensor bias;
  Conv3dSpec spec;
};

struct LinearLayer
{
  LinearLayer() = default;
  LinearLayer(
    ParamStore & params, const std::string & name, int64_t in_features, int64_t out_features,
    Rng & rng);

  Tensor operator()(const Tensor & x) const;

  Tensor weight;
  Tensor bias;
};

}  // namespace fusiondet

#endif  // FUSIONDET_NN_HPP_
