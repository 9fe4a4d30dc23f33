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

#ifndef FUSIONDET_OPTIM_HPP_
#define FUSIONDET_OPTIM_HPP_

#include <string>
#include <utility>
#include <vector>

#include "fusiondet/tensor.hpp"

namespace fusiondet
{

/// Ordered collection of named trainable tensors. Order is the checkpoint
/// and optimizer-state order, so it must be construction-deterministic.
class ParamStore
{
public:
  Tensor add(const std::string & name, Tensor t);
  const std::vector<std::pair<std::string, Tensor>> & items() const { return items_; }
  Tensor find(const std::string & name) const;
  int64_t total_scalars() const;
  void zero_grad();

private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

struct AdamWConfig
{
  Scalar lr = Scalar(2e-4);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);
  Scalar weight_decay = Scalar(0.01);
};

/// Adam with decoupled weight decay. Step order follows the ParamStore order.
class AdamW
{
public:
  AdamW(const ParamStore & params, AdamWConfig config);

  /// Applies one update from the accumulated grads; throws if any parameter
  /// has no grad buffer. Does not clear grads.
  void step();
  void set_lr(Scalar lr) { config_.lr = lr; }
  Scalar lr() const { return config_.lr; }
  int64_t step_count() const { return step_count_; }

private:
  std::vector<Tensor> params_;
  std::vector<std::vector<Scalar>> m_;
  std::vector<std::vector<Scalar>> v_;
  AdamWConfig config_;
  int64_t step_count_ = 0;
};

}  // namespace fusiondet

#endif  // FUSIONDET_OPTIM_HPP_
