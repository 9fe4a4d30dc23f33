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

#include "fusiondet/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace fusiondet
{

int64_t shape_numel(const std::vector<int64_t> & shape)
{
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e <= 0) {
      throw std::invalid_argument("tensor extent must be positive, got " + std::to_string(e));
    }
    n *= e;
  }
  return n;
}

std::string shape_str(const std::vector<int64_t> & shape)
{
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "," : "") << shape[i];
  }
  os << "]";
  return os.str();
}

int64_t TensorImpl::numel() const { return shape_numel(shape); }

void TensorImpl::ensure_grad()
{
  if (grad.empty()) {
    grad.assign(data.size(), Scalar(0));
  }
}

Tensor::Tensor() = default;

Tensor Tensor::zeros(std::vector<int64_t> shape, bool requires_grad)
{
  return full(std::move(shape), Scalar(0), requires_grad);
}

Tensor Tensor::full(std::vector<int64_t> shape, Scalar value, bool requires_grad)
{
  auto impl = std::make_shared<TensorImpl>();
  const int64_t n = shape_numel(shape);
  impl->shape = std::move(shape);
  impl->data.assign(static_cast<size_t>(n), value);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(std::vector<int64_t> shape, std::vector<Scalar> data, bool requires_grad)
{
  const int64_t n = shape_numel(shape);
  if (n != static_cast<int64_t>(data.size())) {
    throw std::invalid_argument(
      "data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(Scalar value, bool requires_grad)
{
  return from_data({1}, {value}, requires_grad);
}

const std::vector<int64_t> & Tensor::shape() const { return impl_->shape; }

int64_t Tensor::dim(size_t axis) const
{
  if (axis >= impl_->shape.size()) {
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range");
  }
  return impl_->shape[axis];
}

int64_t Tensor::numel() const { return impl_->numel(); }

std::vector<Scalar> & Tensor::data() { return impl_->data; }
const std::vector<Scalar> & Tensor::data() const { return impl_->data; }

Scalar Tensor::item() const
{
  if (numel() != 1) {
    throw std::logic_error("item() on tensor of shape " + shape_str(impl_->shape));
  }
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::vector<Scalar> & Tensor::grad()
{
  impl_->ensure_grad();
  return impl_->grad;
}

const std::vector<Scalar> & Tensor::grad() const
{
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad()
{
  if (!impl_->grad.empty()) {
    std::fill(impl_->grad.begin(), impl_->grad.end(), Scalar(0));
  }
}

namespace
{

void topo_visit(
  TensorImpl * node, std::unordered_set<TensorImpl *> & seen, std::vector<TensorImpl *> & order)
{
  // Iterative DFS; pipeline graphs are deep enough to overflow recursion.
  struct Frame
  {
    TensorImpl * node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({node, 0});
  seen.insert(node);
  while (!stack.empty()) {
    Frame & f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorImpl * p = f.node->parents[f.next_parent++].get();
      if (p->backward_fn && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
}

}  // namespace

void Tensor::backward() const
{
  if (numel() != 1) {
    throw std::logic_error(
      "backward() requires a scalar loss, got shape " + shape_str(impl_->shape));
  }
  impl_->ensure_grad();
  impl_->grad[0] += Scalar(1);

  std::unordered_set<TensorImpl *> seen;
  std::vector<TensorImpl *> order;
  if (impl_->backward_fn) {
    topo_visit(impl_.get(), seen, order);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl * node = *it;
    node->ensure_grad();
    node->backward_fn(*node);
  }
}

Tensor Tensor::detach() const
{
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = false;
  return Tensor(std::move(impl));
}

namespace
{
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

Tensor make_node(
  std::vector<int64_t> shape, std::vector<Scalar> data, std::vector<Tensor> parents,
  std::function<void(TensorImpl &)> backward_fn)
{
  const int64_t n = shape_numel(shape);
  if (n != static_cast<int64_t>(data.size())) {
    throw std::invalid_argument("make_node: data/shape mismatch");
  }
  bool needs = false;
  if (g_grad_enabled) {
    for (const Tensor & p : parents) {
      needs = needs || p.requires_grad() || p.impl()->backward_fn;
    }
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  if (needs) {
    impl->parents.reserve(parents.size());
    for (const Tensor & p : parents) {
      impl->parents.push_back(p.impl_ptr());
    }
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(impl));
}

}  // namespace fusiondet
