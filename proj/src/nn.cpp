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

#include "fusiondet/nn.hpp"

#include <cmath>

namespace fusiondet
{

Tensor uniform_param(std::vector<int64_t> shape, int64_t fan_in, Rng & rng)
{
  const Scalar bound = Scalar(std::sqrt(1.0 / static_cast<double>(fan_in)));
  std::uniform_real_distribution<double> dist(-double(bound), double(bound));
  const int64_t n = shape_numel(shape);
  std::vector<Scalar> data(static_cast<size_t>(n));
  for (Scalar & v : data) {
    v = static_cast<Scalar>(dist(rng));
  }
  return Tensor::from_data(std::move(shape), std::move(data), /*requires_grad=*/true);
}

Conv3dLayer::Conv3dLayer(
  ParamStore & params, const std::string & name, int64_t in_ch, int64_t out_ch,
  std::array<int64_t, 3> kernel, std::array<int64_t, 3> stride, std::array<int64_t, 3> padding,
  Rng & rng)
{
  const int64_t fan_in = in_ch * kernel[0] * kernel[1] * kernel[2];
  weight = params.add(
    name + ".weight", uniform_param({out_ch, in_ch, kernel[0], kernel[1], kernel[2]}, fan_in, rng));
  bias = params.add(name + ".bias", Tensor::zeros({out_ch}, /*requires_grad=*/true));
  spec.stride = stride;
  spec.padding = padding;
}

Tensor Conv3dLayer::operator()(const Tensor & x) const { return conv3d(x, weight, bias, spec); }

LinearLayer::LinearLayer(
  ParamStore & params, const std::string & name, int64_t in_features, int64_t out_features,
  Rng & rng)
{
  weight =
    params.add(name + ".weight", uniform_param({out_features, in_features}, in_features, rng));
  bias = params.add(name + ".bias", Tensor::zeros({out_features}, /*requires_grad=*/true));
}

Tensor LinearLayer::operator()(const Tensor & x) const { return linear(x, weight, bias); }

}  // namespace fusiondet
