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

#include "semvar/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "semvar/errors.hpp"
#include "semvar/gemm.hpp"

namespace semvar {

std::int64_t shape_size(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw UsageError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

namespace {

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d <= 0) throw UsageError("tensor extents must be positive, got " + shape_str(shape));
  }
}

std::int64_t norm_axis(std::int64_t axis, std::int64_t rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw UsageError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return axis;
}

std::vector<std::int64_t> row_major_strides(const Shape& shape) {
  std::vector<std::int64_t> s(shape.size(), 1);
  for (std::int64_t i = static_cast<std::int64_t>(shape.size()) - 2; i >= 0; --i) {
    s[i] = s[i + 1] * shape[i + 1];
  }
  return s;
}

// Strides of `in` expressed in the coordinates of the broadcast shape `out`;
// broadcast dimensions get stride 0.
std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::int64_t> s(out.size(), 0);
  const auto own = row_major_strides(in);
  const std::size_t off = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i) s[off + i] = in[i] == 1 ? 0 : own[i];
  return s;
}

// Calls f(i, ia, ib) for every flat output index i with the matching flat
// offsets into a and b.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::int64_t>& sa,
                        const std::vector<std::int64_t>& sb, F&& f) {
  const std::size_t rank = out.size();
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  const std::int64_t inner = out[rank - 1];
  const std::int64_t sai = sa[rank - 1];
  const std::int64_t sbi = sb[rank - 1];
  const std::int64_t outer = shape_size(out) / inner;
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t ia = 0, ib = 0, i = 0;
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t j = 0; j < inner; ++j) f(i + j, ia + j * sai, ib + j * sbi);
    i += inner;
    for (std::int64_t d = static_cast<std::int64_t>(rank) - 2; d >= 0; --d) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <typename T>
thread_local BasicTape<T>* g_active_tape = nullptr;

template <typename T>
bool should_record(std::initializer_list<const BasicTensor<T>*> inputs) {
  if (active_tape<T>() == nullptr) return false;
  for (const auto* x : inputs) {
    if (x->requires_grad()) return true;
  }
  return false;
}

template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, bool tracked) {
  BasicTensor<T> out(std::move(shape), std::move(data));
  if (tracked) {
    out.node()->requires_grad = true;
    out.node()->is_leaf = false;
  }
  return out;
}

template <typename T>
void push_record(const char* op, std::vector<std::shared_ptr<TensorNode<T>>> inputs,
                 const BasicTensor<T>& out, std::function<void()> backward) {
  active_tape<T>()->record({op, std::move(inputs), out.node(), std::move(backward)});
}

enum class BinOp { kAdd, kSub, kMul };

template <typename T>
BasicTensor<T> binary(const BasicTensor<T>& a, const BasicTensor<T>& b, BinOp op) {
  Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  std::vector<T> out(static_cast<std::size_t>(shape_size(out_shape)));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  if (a.shape() == b.shape()) {
    const std::size_t n = out.size();
    switch (op) {
      case BinOp::kAdd: for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i]; break;
      case BinOp::kSub: for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i]; break;
      case BinOp::kMul: for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i]; break;
    }
  } else {
    switch (op) {
      case BinOp::kAdd:
        for_each_broadcast(out_shape, sa, sb, [&](auto i, auto ia, auto ib) { out[i] = pa[ia] + pb[ib]; });
        break;
      case BinOp::kSub:
        for_each_broadcast(out_shape, sa, sb, [&](auto i, auto ia, auto ib) { out[i] = pa[ia] - pb[ib]; });
        break;
      case BinOp::kMul:
        for_each_broadcast(out_shape, sa, sb, [&](auto i, auto ia, auto ib) { out[i] = pa[ia] * pb[ib]; });
        break;
    }
  }
  const bool tracked = should_record<T>({&a, &b});
  auto result = make_result<T>(out_shape, std::move(out), tracked);
  if (tracked) {
    auto na = a.node(), nb = b.node(), no = result.node();
    static constexpr const char* kNames[] = {"add", "sub", "mul"};
    push_record<T>(kNames[static_cast<int>(op)], {na, nb}, result,
                   [na, nb, no, sa, sb, op]() {
      const T* g = no->grad.data();
      if (na->requires_grad) {
        T* ga = na->ensure_grad().data();
        const T* vb = nb->data.data();
        if (op == BinOp::kMul) {
          for_each_broadcast(no->shape, sa, sb, [&](auto i, auto ia, auto ib) { ga[ia] += g[i] * vb[ib]; });
        } else {
          for_each_broadcast(no->shape, sa, sb, [&](auto i, auto ia, auto) { ga[ia] += g[i]; });
        }
      }
      if (nb->requires_grad) {
        T* gb = nb->ensure_grad().data();
        const T* va = na->data.data();
        switch (op) {
          case BinOp::kAdd:
            for_each_broadcast(no->shape, sa, sb, [&](auto i, auto, auto ib) { gb[ib] += g[i]; });
            break;
          case BinOp::kSub:
            for_each_broadcast(no->shape, sa, sb, [&](auto i, auto, auto ib) { gb[ib] -= g[i]; });
            break;
          case BinOp::kMul:
            for_each_broadcast(no->shape, sa, sb, [&](auto i, auto ia, auto ib) { gb[ib] += g[i] * va[ia]; });
            break;
        }
      }
    });
  }
  return result;
}

// y = f(x) elementwise with derivative df(x, y).
template <typename T, class Fwd, class Deriv>
BasicTensor<T> unary(const char* name, const BasicTensor<T>& x, Fwd fwd, Deriv deriv) {
  std::vector<T> out(x.data().size());
  const T* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(px[i]);
  const bool tracked = should_record<T>({&x});
  auto result = make_result<T>(x.shape(), std::move(out), tracked);
  if (tracked) {
    auto nx = x.node(), no = result.node();
    push_record<T>(name, {nx}, result, [nx, no, deriv]() {
      T* gx = nx->ensure_grad().data();
      const T* g = no->grad.data();
      const T* vx = nx->data.data();
      const T* vy = no->data.data();
      for (std::size_t i = 0; i < no->data.size(); ++i) gx[i] += g[i] * deriv(vx[i], vy[i]);
    });
  }
  return result;
}

}  // namespace

template <typename T>
BasicTape<T>* active_tape() {
  return g_active_tape<T>;
}

template <typename T>
TapeScope<T>::TapeScope(BasicTape<T>& tape) : previous_(g_active_tape<T>) {
  g_active_tape<T> = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  g_active_tape<T> = previous_;
}

template <typename T>
void BasicTape<T>::backward(const BasicTensor<T>& loss) {
  if (loss.size() != 1) {
    throw UsageError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) throw UsageError("backward: loss does not require grad");
  for (auto& rec : records_) rec.output->grad.clear();
  loss.node()->ensure_grad()[0] += T(1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward();
  }
}

// ---- BasicTensor ----

template <typename T>
BasicTensor<T>::BasicTensor() : node_(std::make_shared<Node>()) {
  node_->data.assign(1, T(0));
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : node_(std::make_shared<Node>()) {
  check_shape(shape);
  node_->data.assign(static_cast<std::size_t>(shape_size(shape)), fill);
  node_->shape = std::move(shape);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data) : node_(std::make_shared<Node>()) {
  check_shape(shape);
  if (static_cast<std::int64_t>(data.size()) != shape_size(shape)) {
    throw UsageError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value) {
  return BasicTensor(Shape{}, std::vector<T>{value});
}

template <typename T>
BasicTensor<T> BasicTensor<T>::vector(std::vector<T> values) {
  const auto n = static_cast<std::int64_t>(values.size());
  return BasicTensor(Shape{n}, std::move(values));
}

template <typename T>
std::int64_t BasicTensor<T>::dim(std::int64_t axis) const {
  return node_->shape[static_cast<std::size_t>(norm_axis(axis, rank()))];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (size() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

template <typename T>
std::vector<T> BasicTensor<T>::grad() const {
  if (node_->grad.empty()) return std::vector<T>(node_->data.size(), T(0));
  return node_->grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  BasicTensor out(node_->shape, node_->data);
  out.node_->requires_grad = node_->requires_grad;
  return out;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(node_->shape, node_->data);
}

// ---- elementwise ----

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(a, b, BinOp::kAdd);
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(a, b, BinOp::kSub);
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(a, b, BinOp::kMul);
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
  return unary<T>("scale", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T s) {
  return unary<T>("add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  // Eigen picks scalar or packet paths by buffer alignment, so every
  // vectorized expression runs on owned (aligned) arrays to keep results
  // independent of where the tensor storage happens to live.
  using Array = Eigen::Array<T, Eigen::Dynamic, 1>;
  static constexpr T kC = T(0.7978845608028654);  // sqrt(2 / pi)
  static constexpr T kA = T(0.044715);
  const auto n = static_cast<Eigen::Index>(x.size());
  const Array vx = Eigen::Map<const Array>(x.data().data(), n);
  auto th = std::make_shared<Array>((kC * (vx + kA * vx.cube())).tanh());
  const Array vo = T(0.5) * vx * (T(1) + *th);
  std::vector<T> out(vo.data(), vo.data() + n);
  const bool tracked = should_record<T>({&x});
  auto result = make_result<T>(x.shape(), std::move(out), tracked);
  if (tracked) {
    auto nx = x.node(), no = result.node();
    push_record<T>("gelu", {nx}, result, [nx, no, th, n]() {
      const Array g = Eigen::Map<const Array>(no->grad.data(), n);
      const Array v = Eigen::Map<const Array>(nx->data.data(), n);
      const Array& t = *th;
      const Array d = g * (T(0.5) * (T(1) + t) +
                           T(0.5) * v * (T(1) - t.square()) * kC * (T(1) + T(3) * kA * v.square()));
      auto gx = nx->ensure_grad();
      for (Eigen::Index i = 0; i < n; ++i) gx[static_cast<std::size_t>(i)] += d[i];
    });
  } else {
    th.reset();
  }
  return result;
}

template <typename T>
BasicTensor<T> silu(const BasicTensor<T>& x) {
  return unary<T>(
      "silu", x, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

// ---- matmul ----

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw UsageError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::int64_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  if (b.dim(-2) != k) {
    throw UsageError("matmul inner dimension mismatch: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  const Shape out_batch = broadcast_shapes(a_batch, b_batch);
  Shape out_shape = out_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  // Offsets (in matrices) of each batch entry into a and b.
  std::vector<std::int64_t> a_off, b_off;
  const bool flat_b = b_batch.empty();
  if (!flat_b) {
    const auto sa = broadcast_strides(a_batch, out_batch);
    const auto sb = broadcast_strides(b_batch, out_batch);
    const auto nb = static_cast<std::size_t>(shape_size(out_batch));
    a_off.resize(nb);
    b_off.resize(nb);
    for_each_broadcast(out_batch, sa, sb, [&](auto i, auto ia, auto ib) {
      a_off[i] = ia;
      b_off[i] = ib;
    });
  }

  std::vector<T> out(static_cast<std::size_t>(shape_size(out_shape)));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  if (flat_b) {
    // [rows, k] x [k, n] with all of a's leading dims folded into rows.
    kernels::gemm<T>(false, false, shape_size(a.shape()) / k, n, k, pa, pb, out.data(), false);
  } else {
    for (std::size_t i = 0; i < a_off.size(); ++i) {
      kernels::gemm<T>(false, false, m, n, k, pa + a_off[i] * m * k, pb + b_off[i] * k * n,
                       out.data() + i * m * n, false);
    }
  }

  const bool tracked = should_record<T>({&a, &b});
  auto result = make_result<T>(out_shape, std::move(out), tracked);
  if (tracked) {
    auto na = a.node(), nb = b.node(), no = result.node();
    push_record<T>("matmul", {na, nb}, result, [na, nb, no, a_off, b_off, flat_b, m, n, k]() {
      const T* g = no->grad.data();
      if (flat_b) {
        const std::int64_t rows = static_cast<std::int64_t>(na->data.size()) / k;
        if (na->requires_grad) {
          kernels::gemm<T>(false, true, rows, k, n, g, nb->data.data(), na->ensure_grad().data(), true);
        }
        if (nb->requires_grad) {
          kernels::gemm<T>(true, false, k, n, rows, na->data.data(), g, nb->ensure_grad().data(), true);
        }
        return;
      }
      for (std::size_t i = 0; i < a_off.size(); ++i) {
        const T* gi = g + i * m * n;
        if (na->requires_grad) {
          kernels::gemm<T>(false, true, m, k, n, gi, nb->data.data() + b_off[i] * k * n,
                           na->ensure_grad().data() + a_off[i] * m * k, true);
        }
        if (nb->requires_grad) {
          kernels::gemm<T>(true, false, k, n, m, na->data.data() + a_off[i] * m * k, gi,
                           nb->ensure_grad().data() + b_off[i] * k * n, true);
        }
      }
    });
  }
  return result;
}

// ---- softmax / normalization ----

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::int64_t axis) {
  axis = norm_axis(axis, x.rank());
  const Shape& s = x.shape();
  const std::int64_t n = s[axis];
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::int64_t i = axis + 1; i < x.rank(); ++i) inner *= s[i];

  std::vector<T> out(x.data().size());
  const T* px = x.data().data();
  if (inner == 1) {
    // Aligned scratch row; see gelu.
    using Array = Eigen::Array<T, Eigen::Dynamic, 1>;
    Array row(n);
    for (std::int64_t o = 0; o < outer; ++o) {
      row = Eigen::Map<const Array>(px + o * n, n);
      row = (row - row.maxCoeff()).exp();
      row /= row.sum();
      std::copy(row.data(), row.data() + n, out.data() + o * n);
    }
  }
  for (std::int64_t o = 0; o < outer && inner > 1; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * n * inner + in;
      T mx = px[base];
      for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, px[base + j * inner]);
      T total = 0;
      for (std::int64_t j = 0; j < n; ++j) {
        const T e = std::exp(px[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (std::int64_t j = 0; j < n; ++j) out[base + j * inner] *= inv;
    }
  }

  const bool tracked = should_record<T>({&x});
  auto result = make_result<T>(s, std::move(out), tracked);
  if (tracked) {
    auto nx = x.node(), no = result.node();
    push_record<T>("softmax", {nx}, result, [nx, no, outer, inner, n]() {
      T* gx = nx->ensure_grad().data();
      const T* g = no->grad.data();
      const T* y = no->data.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = o * n * inner + in;
          T dot = 0;
          for (std::int64_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
          for (std::int64_t j = 0; j < n; ++j) {
            const std::int64_t p = base + j * inner;
            gx[p] += y[p] * (g[p] - dot);
          }
        }
      }
    });
  }
  return result;
}

namespace {

template <typename T>
BasicTensor<T> layer_norm_impl(const BasicTensor<T>& x, const BasicTensor<T>* gamma,
                               const BasicTensor<T>* beta, T eps) {
  if (x.rank() < 1) throw UsageError("layer_norm needs rank >= 1");
  const std::int64_t d = x.dim(-1);
  if (gamma && (gamma->size() != d || beta->size() != d)) {
    throw UsageError("layer_norm: gamma/beta must have extent " + std::to_string(d));
  }
  const std::int64_t rows = x.size() / d;
  std::vector<T> out(x.data().size());
  std::vector<T> xhat(x.data().size());
  std::vector<T> rstd(static_cast<std::size_t>(rows));
  const T* px = x.data().data();
  const T* pg = gamma ? gamma->data().data() : nullptr;
  const T* pb = beta ? beta->data().data() : nullptr;
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = px + r * d;
    T mu = 0;
    for (std::int64_t j = 0; j < d; ++j) mu += row[j];
    mu /= T(d);
    T var = 0;
    for (std::int64_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::int64_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * rs;
      xhat[r * d + j] = h;
      out[r * d + j] = pg ? h * pg[j] + pb[j] : h;
    }
  }

  const bool tracked = gamma ? should_record<T>({&x, gamma, beta}) : should_record<T>({&x});
  auto result = make_result<T>(x.shape(), std::move(out), tracked);
  if (tracked) {
    auto nx = x.node(), no = result.node();
    std::shared_ptr<TensorNode<T>> ng = gamma ? gamma->node() : nullptr;
    std::shared_ptr<TensorNode<T>> nb = beta ? beta->node() : nullptr;
    std::vector<std::shared_ptr<TensorNode<T>>> inputs{nx};
    if (ng) {
      inputs.push_back(ng);
      inputs.push_back(nb);
    }
    push_record<T>(gamma ? "layer_norm" : "normalize", std::move(inputs), result,
                   [nx, no, ng, nb, xhat = std::move(xhat), rstd = std::move(rstd), rows, d]() {
      const T* g = no->grad.data();
      const T* pgam = ng ? ng->data.data() : nullptr;
      if (ng && ng->requires_grad) {
        T* gg = ng->ensure_grad().data();
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
      }
      if (nb && nb->requires_grad) {
        T* gb = nb->ensure_grad().data();
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
      }
      if (!nx->requires_grad) return;
      T* gx = nx->ensure_grad().data();
      std::vector<T> gh(static_cast<std::size_t>(d));
      for (std::int64_t r = 0; r < rows; ++r) {
        T mean_gh = 0, mean_ghx = 0;
        for (std::int64_t j = 0; j < d; ++j) {
          gh[j] = g[r * d + j] * (pgam ? pgam[j] : T(1));
          mean_gh += gh[j];
          mean_ghx += gh[j] * xhat[r * d + j];
        }
        mean_gh /= T(d);
        mean_ghx /= T(d);
        for (std::int64_t j = 0; j < d; ++j) {
          gx[r * d + j] += rstd[r] * (gh[j] - mean_gh - xhat[r * d + j] * mean_ghx);
        }
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> reduce_axis(const BasicTensor<T>& x, std::int64_t axis, bool keepdim, bool average) {
  axis = norm_axis(axis, x.rank());
  const Shape& s = x.shape();
  const std::int64_t n = s[axis];
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::int64_t i = axis + 1; i < x.rank(); ++i) inner *= s[i];
  Shape out_shape;
  for (std::int64_t i = 0; i < x.rank(); ++i) {
    if (i != axis) {
      out_shape.push_back(s[i]);
    } else if (keepdim) {
      out_shape.push_back(1);
    }
  }
  const T factor = average ? T(1) / T(n) : T(1);
  std::vector<T> out(static_cast<std::size_t>(outer * inner), T(0));
  const T* px = x.data().data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t j = 0; j < n; ++j)
      for (std::int64_t in = 0; in < inner; ++in) out[o * inner + in] += px[(o * n + j) * inner + in];
  if (average) {
    for (auto& v : out) v *= factor;
  }

  const bool tracked = should_record<T>({&x});
  auto result = make_result<T>(out_shape, std::move(out), tracked);
  if (tracked) {
    auto nx = x.node(), no = result.node();
    push_record<T>(average ? "mean" : "sum", {nx}, result, [nx, no, outer, inner, n, factor]() {
      T* gx = nx->ensure_grad().data();
      const T* g = no->grad.data();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t j = 0; j < n; ++j)
          for (std::int64_t in = 0; in < inner; ++in)
            gx[(o * n + j) * inner + in] += g[o * inner + in] * factor;
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> reduce_all(const BasicTensor<T>& x, bool average) {
  T total = 0;
  for (T v : x.data()) total += v;
  const T factor = average ? T(1) / T(x.size()) : T(1);
  const bool tracked = should_record<T>({&x});
  auto result = make_result<T>(Shape{}, std::vector<T>{total * factor}, tracked);
  if (tracked) {
    auto nx = x.node(), no = result.node();
    push_record<T>(average ? "mean_all" : "sum_all", {nx}, result, [nx, no, factor]() {
      T* gx = nx->ensure_grad().data();
      const T g = no->grad[0] * factor;
      for (std::size_t i = 0; i < nx->data.size(); ++i) gx[i] += g;
    });
  }
  return result;
}

}  // namespace

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps) {
  return layer_norm_impl(x, &gamma, &beta, eps);
}

template <typename T>
BasicTensor<T> normalize(const BasicTensor<T>& x, T eps) {
  return layer_norm_impl<T>(x, nullptr, nullptr, eps);
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x, std::int64_t axis, bool keepdim) {
  return reduce_axis(x, axis, keepdim, false);
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x, std::int64_t axis, bool keepdim) {
  return reduce_axis(x, axis, keepdim, true);
}

template <typename T>
BasicTensor<T> sum_all(const BasicTensor<T>& x) {
  return reduce_all(x, false);
}

template <typename T>
BasicTensor<T> mean_all(const BasicTensor<T>& x) {
  return reduce_all(x, true);
}

// ---- layout ----

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw UsageError("reshape: at most one -1 extent");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0 && known > 0) shape[infer] = x.size() / known;
  if (shape_size(shape) != x.size()) {
    throw UsageError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  const bool tracked = should_record<T>({&x});
  auto result = make_result<T>(std::move(shape), std::move(out), tracked);
  if (tracked) {
    auto nx = x.node(), no = result.node();
    push_record<T>("reshape", {nx}, result, [nx, no]() {
      T* gx = nx->ensure_grad().data();
      for (std::size_t i = 0; i < no->grad.size(); ++i) gx[i] += no->grad[i];
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::int64_t>& perm) {
  const std::int64_t rank = x.rank();
  if (static_cast<std::int64_t>(perm.size()) != rank) {
    throw UsageError("permute: permutation size does not match rank");
  }
  std::vector<bool> seen(static_cast<std::size_t>(rank), false);
  for (auto p : perm) {
    if (p < 0 || p >= rank || seen[p]) throw UsageError("permute: invalid permutation");
    seen[p] = true;
  }
  const auto in_strides = row_major_strides(x.shape());
  Shape out_shape(static_cast<std::size_t>(rank));
  std::vector<std::int64_t> gather(static_cast<std::size_t>(rank));
  for (std::int64_t d = 0; d < rank; ++d) {
    out_shape[d] = x.shape()[perm[d]];
    gather[d] = in_strides[perm[d]];
  }
  // Offset into x for every output element.
  std::vector<std::int64_t> src(static_cast<std::size_t>(x.size()));
  const std::vector<std::int64_t> zero(static_cast<std::size_t>(rank), 0);
  for_each_broadcast(out_shape, gather, zero, [&](auto i, auto ia, auto) { src[i] = ia; });

  std::vector<T> out(src.size());
  const T* px = x.data().data();
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = px[src[i]];
  const bool tracked = should_record<T>({&x});
  auto result = make_result<T>(std::move(out_shape), std::move(out), tracked);
  if (tracked) {
    auto nx = x.node(), no = result.node();
    push_record<T>("permute", {nx}, result, [nx, no, src = std::move(src)]() {
      T* gx = nx->ensure_grad().data();
      for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += no->grad[i];
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x, std::int64_t a0, std::int64_t a1) {
  a0 = norm_axis(a0, x.rank());
  a1 = norm_axis(a1, x.rank());
  std::vector<std::int64_t> perm(static_cast<std::size_t>(x.rank()));
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[a0], perm[a1]);
  return permute(x, perm);
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& xs, std::int64_t axis) {
  if (xs.empty()) throw UsageError("concat: no inputs");
  const std::int64_t rank = xs[0].rank();
  axis = norm_axis(axis, rank);
  Shape out_shape = xs[0].shape();
  out_shape[axis] = 0;
  for (const auto& x : xs) {
    if (x.rank() != rank) throw UsageError("concat: rank mismatch");
    for (std::int64_t d = 0; d < rank; ++d) {
      if (d != axis && x.shape()[d] != xs[0].shape()[d]) {
        throw UsageError("concat: extent mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(xs[0].shape()));
      }
    }
    out_shape[axis] += x.shape()[axis];
  }
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= out_shape[i];
  for (std::int64_t i = axis + 1; i < rank; ++i) inner *= out_shape[i];
  const std::int64_t out_block = out_shape[axis] * inner;
  std::vector<T> out(static_cast<std::size_t>(shape_size(out_shape)));
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& x : xs) {
    offsets.push_back(off);
    const std::int64_t block = x.shape()[axis] * inner;
    const T* px = x.data().data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy(px + o * block, px + (o + 1) * block, out.begin() + o * out_block + off);
    off += block;
  }

  bool tracked = false;
  if (active_tape<T>()) {
    for (const auto& x : xs) tracked = tracked || x.requires_grad();
  }
  auto result = make_result<T>(std::move(out_shape), std::move(out), tracked);
  if (tracked) {
    std::vector<std::shared_ptr<TensorNode<T>>> nodes;
    for (const auto& x : xs) nodes.push_back(x.node());
    auto no = result.node();
    push_record<T>("concat", nodes, result, [nodes, no, offsets, outer, out_block]() {
      for (std::size_t t = 0; t < nodes.size(); ++t) {
        if (!nodes[t]->requires_grad) continue;
        T* gx = nodes[t]->ensure_grad().data();
        const std::int64_t block = static_cast<std::int64_t>(nodes[t]->data.size()) / outer;
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t j = 0; j < block; ++j)
            gx[o * block + j] += no->grad[o * out_block + offsets[t] + j];
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, std::int64_t axis, std::int64_t start, std::int64_t end) {
  axis = norm_axis(axis, x.rank());
  const std::int64_t n = x.shape()[axis];
  if (start < 0 || end > n || start >= end) {
    throw UsageError("slice [" + std::to_string(start) + "," + std::to_string(end) +
                     ") out of range for extent " + std::to_string(n));
  }
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (std::int64_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  Shape out_shape = x.shape();
  out_shape[axis] = end - start;
  const std::int64_t block = (end - start) * inner;
  std::vector<T> out(static_cast<std::size_t>(outer * block));
  const T* px = x.data().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    const T* src = px + o * n * inner + start * inner;
    std::copy(src, src + block, out.begin() + o * block);
  }
  const bool tracked = should_record<T>({&x});
  auto result = make_result<T>(std::move(out_shape), std::move(out), tracked);
  if (tracked) {
    auto nx = x.node(), no = result.node();
    push_record<T>("slice", {nx}, result, [nx, no, outer, inner, n, start, block]() {
      T* gx = nx->ensure_grad().data();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t j = 0; j < block; ++j)
          gx[o * n * inner + start * inner + j] += no->grad[o * block + j];
    });
  }
  return result;
}

template <typename T>
void validate_finite(std::span<const T> values, std::string_view what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericalError("non-finite value in " + std::string(what) + " at index " +
                           std::to_string(i));
    }
  }
}

template <typename T>
void validate_finite(const BasicTensor<T>& x, std::string_view what) {
  validate_finite<T>(x.data(), what);
}

#define SEMVAR_INSTANTIATE(T)                                                              \
  template class BasicTensor<T>;                                                           \
  template class BasicTape<T>;                                                             \
  template class TapeScope<T>;                                                             \
  template BasicTape<T>* active_tape<T>();                                                 \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);               \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);               \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);               \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                 \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                            \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                     \
  template BasicTensor<T> silu(const BasicTensor<T>&);                                     \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);            \
  template BasicTensor<T> softmax(const BasicTensor<T>&, std::int64_t);                    \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&,         \
                                     const BasicTensor<T>&, T);                            \
  template BasicTensor<T> normalize(const BasicTensor<T>&, T);                             \
  template BasicTensor<T> sum(const BasicTensor<T>&, std::int64_t, bool);                  \
  template BasicTensor<T> mean(const BasicTensor<T>&, std::int64_t, bool);                 \
  template BasicTensor<T> sum_all(const BasicTensor<T>&);                                  \
  template BasicTensor<T> mean_all(const BasicTensor<T>&);                                 \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                           \
  template BasicTensor<T> permute(const BasicTensor<T>&, const std::vector<std::int64_t>&); \
  template BasicTensor<T> transpose(const BasicTensor<T>&, std::int64_t, std::int64_t);    \
  template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&, std::int64_t);        \
  template BasicTensor<T> slice(const BasicTensor<T>&, std::int64_t, std::int64_t,         \
                                std::int64_t);                                             \
  template void validate_finite(const BasicTensor<T>&, std::string_view);                  \
  template void validate_finite(std::span<const T>, std::string_view);

SEMVAR_INSTANTIATE(float)
SEMVAR_INSTANTIATE(double)

#undef SEMVAR_INSTANTIATE

}  // namespace semvar
