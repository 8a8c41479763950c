// Copyright 2026 The Semvar Authors.
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

#ifndef SEMVAR_TENSOR_HPP_
#define SEMVAR_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace semvar {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Numpy-style broadcast of two shapes aligned on trailing dimensions.
// Throws UsageError when an extent pair is neither equal nor contains a 1.
Shape broadcast_shapes(const Shape& a, const Shape& b);

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  bool is_leaf = true;

  std::span<T> ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

// Dense row-major tensor with shared storage. Copies of a BasicTensor alias
// the same node; use clone() for a deep copy.
template <typename T>
class BasicTensor {
 public:
  using Node = TensorNode<T>;

  BasicTensor();
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> data);

  static BasicTensor scalar(T value);
  static BasicTensor vector(std::vector<T> values);

  const Shape& shape() const { return node_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }
  std::int64_t dim(std::int64_t axis) const;
  std::int64_t size() const { return static_cast<std::int64_t>(node_->data.size()); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T operator[](std::int64_t i) const { return node_->data[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return node_->requires_grad; }
  BasicTensor& set_requires_grad(bool on);
  bool is_leaf() const { return node_->is_leaf; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Zeros when no gradient has been accumulated.
  std::vector<T> grad() const;
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  BasicTensor clone() const;   // deep copy, same requires_grad, no grad
  BasicTensor detach() const;  // deep copy without gradient tracking

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit BasicTensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Ordered record of primitive operations. Ops record here only while a
// TapeScope for the tape is active on the current thread and at least one
// input requires a gradient. Records are appended in execution order, which
// is a topological order; backward() replays them in exact reverse.
template <typename T>
class BasicTape {
 public:
  using Node = TensorNode<T>;
  struct Record {
    std::string op;
    std::vector<std::shared_ptr<Node>> inputs;
    std::shared_ptr<Node> output;
    std::function<void()> backward;
  };

  void record(Record rec) { records_.push_back(std::move(rec)); }

  // Populates gradients on every requires_grad leaf reachable from `loss`.
  // Leaf gradients accumulate across calls until zero_grad(); intermediate
  // gradients are reset at the start of each call.
  void backward(const BasicTensor<T>& loss);

  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }
  void clear() { records_.clear(); }

 private:
  std::vector<Record> records_;
};

using Tape = BasicTape<float>;
using Tape64 = BasicTape<double>;

template <typename T>
BasicTape<T>* active_tape();

// Makes `tape` the active tape for this thread for the scope's lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(BasicTape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  BasicTape<T>* previous_;
};

// ---- elementwise (numpy broadcasting on trailing dims) ----
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, T s);
template <typename T> BasicTensor<T> add_scalar(const BasicTensor<T>& a, T s);

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <typename T> BasicTensor<T> gelu(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> silu(const BasicTensor<T>& x);

// ---- contractions and normalizations ----
// [..., m, k] x [..., k, n] -> [..., m, n]; batch dims broadcast.
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& x, std::int64_t axis);
// Normalizes over the last dim, then applies gamma/beta of that extent.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps = T(1e-6));
// layer_norm without the affine part.
template <typename T> BasicTensor<T> normalize(const BasicTensor<T>& x, T eps = T(1e-6));

// ---- reductions ----
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x, std::int64_t axis, bool keepdim = false);
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x, std::int64_t axis, bool keepdim = false);
template <typename T> BasicTensor<T> sum_all(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mean_all(const BasicTensor<T>& x);

// ---- layout ----
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
template <typename T> BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::int64_t>& perm);
template <typename T> BasicTensor<T> transpose(const BasicTensor<T>& x, std::int64_t a0, std::int64_t a1);
template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& xs, std::int64_t axis);
template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, std::int64_t axis, std::int64_t start, std::int64_t end);

// Throws NumericalError naming `what` if any value is NaN or infinite.
template <typename T> void validate_finite(const BasicTensor<T>& x, std::string_view what);
template <typename T> void validate_finite(std::span<const T> values, std::string_view what);

template <typename To, typename From>
BasicTensor<To> cast(const BasicTensor<From>& x) {
  std::vector<To> out(x.data().begin(), x.data().end());
  return BasicTensor<To>(x.shape(), std::move(out));
}

}  // namespace semvar

#endif  // SEMVAR_TENSOR_HPP_
