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

#include "fusiondet/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace fusiondet
{

Tensor ParamStore::add(const std::string & name, Tensor t)
{
  for (const auto & [n, _] : items_) {
    if (n == name) {
      throw std::invalid_argument("duplicate parameter name: " + name);
    }
  }
  items_.emplace_back(name, t);
  return t;
}

Tensor ParamStore::find(const std::string & name) const
{
  for (const auto & [n, t] : items_) {
    if (n == name) return t;
  }
  throw std::out_of_range("no parameter named " + name);
}

int64_t ParamStore::total_scalars() const
{
  int64_t n = 0;
  for (const auto & [_, t] : items_) n += t.numel();
  return n;
}

void ParamStore::zero_grad()
{
  for (auto & [_, t] : items_) t.zero_grad();
}

AdamW::AdamW(const ParamStore & params, AdamWConfig config) : config_(config)
{
  for (const auto & [_, t] : params.items()) {
    params_.push_back(t);
    m_.emplace_back(t.numel(), Scalar(0));
    v_.emplace_back(t.numel(), Scalar(0));
  }
}

void AdamW::step()
{
  ++step_count_;
  const Scalar bc1 = Scalar(1) - std::pow(config_.beta1, Scalar(step_count_));
  const Scalar bc2 = Scalar(1) - std::pow(config_.beta2, Scalar(step_count_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor & p = params_[i];
    if (!p.has_grad()) {
      throw std::logic_error("adamw_step: parameter " + std::to_string(i) + " has no grad");
    }
    auto & data = p.data();
    const auto & grad = p.grad();
    auto & m = m_[i];
    auto & v = v_[i];
    for (size_t j = 0; j < data.size(); ++j) {
      const Scalar g = grad[j];
      m[j] = config_.beta1 * m[j] + (Scalar(1) - config_.beta1) * g;
      v[j] = config_.beta2 * v[j] + (Scalar(1) - config_.beta2) * g * g;
      const Scalar m_hat = m[j] / bc1;
      const Scalar v_hat = v[j] / bc2;
      // Decoupled weight decay: applied to the parameter, not the gradient.
      data[j] -= config_.lr * (m_hat / (std::sqrt(v_hat) + config_.eps) +
                               config_.weight_decay * data[j]);
    }
  }
}

}  // namespace fusiondet
