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

#ifndef FUSIONDET_TENSOR_HPP_
#define FUSIONDET_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace fusiondet
{

#ifdef FUSIONDET_SCALAR_F64
using Scalar = double;
#else
using Scalar = float;
#endif

struct TensorImpl;

/// Dense row-major N-d array with optional reverse-mode gradient tracking.
/// Copying a Tensor copies a handle; the buffer is shared.
class Tensor
{
public:
  Tensor();

  static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<int64_t> shape, Scalar value, bool requires_grad = false);
  static Tensor from_data(
    std::vector<int64_t> shape, std::vector<Scalar> data, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int64_t> & shape() const;
  int64_t dim(size_t axis) const;
  int64_t numel() const;

  std::vector<Scalar> & data();
  const std::vector<Scalar> & data() const;
  Scalar item() const;

  bool requires_grad() const;
  bool has_grad() const;
  std::vector<Scalar> & grad();
  const std::vector<Scalar> & grad() const;
  void zero_grad();

  /// Reverse-mode sweep from a scalar tensor. Grads accumulate into every
  /// requires_grad leaf reachable from this node. Throws if numel() != 1.
  void backward() const;

  /// Drops graph edges, keeping values. Used when a value feeds a later
  /// graph but must not backprop further.
  Tensor detach() const;

  TensorImpl * impl() const { return impl_.get(); }
  std::shared_ptr<TensorImpl> impl_ptr() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

private:
  std::shared_ptr<TensorImpl> impl_;
};

struct TensorImpl
{
  std::vector<int64_t> shape;
  std::vector<Scalar> data;
  std::vector<Scalar> grad;  // empty until first accumulation
  bool requires_grad = false;
  // Graph edges; empty for leaves.
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl &)> backward_fn;

  int64_t numel() const;
  void ensure_grad();
};

/// Grad recording is on by default; a NoGradGuard suppresses graph edges for
/// its scope so inference frees intermediates as soon as they leave use.
bool grad_enabled();

struct NoGradGuard
{
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard & operator=(const NoGradGuard &) = delete;

private:
  bool saved_;
};

/// Builds a graph node from already-computed forward data. `backward_fn`
/// receives the node (with grad populated) and must accumulate into parents.
Tensor make_node(
  std::vector<int64_t> shape, std::vector<Scalar> data, std::vector<Tensor> parents,
  std::function<void(TensorImpl &)> backward_fn);

int64_t shape_numel(const std::vector<int64_t> & shape);
std::string shape_str(const std::vector<int64_t> & shape);

}  // namespace fusiondet

#endif  // FUSIONDET_TENSOR_HPP_
