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

#ifndef FUSIONDET_TESTS_GRADCHECK_HPP_
#define FUSIONDET_TESTS_GRADCHECK_HPP_

#include <cmath>
#include <functional>
#include <vector>

#include "fusiondet/tensor.hpp"

namespace fusiondet::testing
{

// Central finite differences against analytic grads. Returns the max
// symmetric relative error over all leaf elements. Only meaningful on the
// f64 build.
inline double gradcheck(
  const std::function<Tensor(void)> & forward, const std::vector<Tensor> & leaves,
  double step = 1e-5)
{
  for (Tensor leaf : leaves) {
    leaf.zero_grad();
  }
  Tensor loss = forward();
  loss.backward();

  double max_err = 0.0;
  for (Tensor leaf : leaves) {
    std::vector<Scalar> analytic = leaf.has_grad() ? leaf.grad() : std::vector<Scalar>(leaf.numel(), 0);
    for (size_t i = 0; i < leaf.data().size(); ++i) {
      const Scalar saved = leaf.data()[i];
      leaf.data()[i] = saved + Scalar(step);
      const double up = double(forward().item());
      leaf.data()[i] = saved - Scalar(step);
      const double down = double(forward().item());
      leaf.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = double(analytic[i]);
      const double err = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-6);
      if (err > max_err) max_err = err;
    }
  }
  return max_err;
}

}  // namespace fusiondet::testing

#endif  // FUSIONDET_TESTS_GRADCHECK_HPP_
