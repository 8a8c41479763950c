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

#ifndef SEMVAR_NN_HPP_
#define SEMVAR_NN_HPP_

#include <cmath>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "semvar/errors.hpp"
#include "semvar/random.hpp"
#include "semvar/tensor.hpp"

// Shared transformer building blocks for the denoiser and the frozen
// encoders.
namespace semvar::nn {

// Ordered, named collection of trainable tensors.
template <typename T>
class ParameterSet {
 public:
  using Entry = std::pair<std::string, BasicTensor<T>>;

  BasicTensor<T>& add(std::string name, BasicTensor<T> value) {
    if (contains(name)) throw UsageError("duplicate parameter '" + name + "'");
    value.set_requires_grad(true);
    entries_.emplace_back(std::move(name), std::move(value));
    return entries_.back().second;
  }

  bool contains(std::string_view name) const {
    for (const auto& e : entries_) {
      if (e.first == name) return true;
    }
    return false;
  }

  const BasicTensor<T>& get(std::string_view name) const {
    for (const auto& e : entries_) {
      if (e.first == name) return e.second;
    }
    throw UsageError("unknown parameter '" + std::string(name) + "'");
  }

  BasicTensor<T>& get(std::string_view name) {
    return const_cast<BasicTensor<T>&>(std::as_const(*this).get(name));
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::int64_t num_elements() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

  ParameterSet clone() const {
    ParameterSet out;
    for (const auto& e : entries_) out.add(e.first, e.second.detach());
    return out;
  }

 private:
  std::vector<Entry> entries_;
};

template <typename T>
BasicTensor<T> normal_tensor(const Shape& shape, double stddev, Rng& rng) {
  std::vector<T> v(static_cast<std::size_t>(shape_size(shape)));
  for (auto& x : v) x = static_cast<T>(stddev * rng.normal());
  return BasicTensor<T>(shape, std::move(v));
}

// Adds "<prefix>.w" [in, out] with stddev 1/sqrt(in) (or zeros) and a zero
// "<prefix>.b" [out].
template <typename T>
void add_linear(ParameterSet<T>& params, const std::string& prefix, std::int64_t in,
                std::int64_t out, Rng& rng, bool zero_init = false, bool bias = true) {
  params.add(prefix + ".w", zero_init ? BasicTensor<T>(Shape{in, out})
                                      : normal_tensor<T>({in, out}, 1.0 / std::sqrt(double(in)), rng));
  if (bias) params.add(prefix + ".b", BasicTensor<T>(Shape{out}));
}

template <typename T>
void add_layer_norm(ParameterSet<T>& params, const std::string& prefix, std::int64_t dim) {
  params.add(prefix + ".gamma", BasicTensor<T>(Shape{dim}, T(1)));
  params.add(prefix + ".beta", BasicTensor<T>(Shape{dim}));
}

template <typename T>
void add_attention(ParameterSet<T>& params, const std::string& prefix, std::int64_t dim,
                   std::int64_t kv_dim, Rng& rng) {
  add_linear(params, prefix + ".q", dim, dim, rng);
  // A key bias only shifts each query's logits by a constant, which softmax
  // cancels, so keys are unbiased.
  add_linear(params, prefix + ".k", kv_dim, dim, rng, false, /*bias=*/false);
  add_linear(params, prefix + ".v", kv_dim, dim, rng);
  add_linear(params, prefix + ".o", dim, dim, rng);
}

template <typename T>
BasicTensor<T> linear(const ParameterSet<T>& params, const std::string& prefix,
                      const BasicTensor<T>& x) {
  auto y = matmul(x, params.get(prefix + ".w"));
  const std::string bias = prefix + ".b";
  return params.contains(bias) ? add(y, params.get(bias)) : y;
}

template <typename T>
BasicTensor<T> layer_norm(const ParameterSet<T>& params, const std::string& prefix,
                          const BasicTensor<T>& x) {
  return semvar::layer_norm(x, params.get(prefix + ".gamma"), params.get(prefix + ".beta"));
}

// Multi-head attention of queries [B, T, d] over keys/values [B, S, kv_dim].
// No positional information is added here.
template <typename T>
BasicTensor<T> attention(const ParameterSet<T>& params, const std::string& prefix,
                         const BasicTensor<T>& queries, const BasicTensor<T>& keys_values,
                         std::int64_t heads) {
  const std::int64_t b = queries.dim(0), t = queries.dim(1), s = keys_values.dim(1);
  const std::int64_t d = params.get(prefix + ".q.w").dim(1);
  const std::int64_t dh = d / heads;
  auto q = linear(params, prefix + ".q", queries);
  auto k = linear(params, prefix + ".k", keys_values);
  auto v = linear(params, prefix + ".v", keys_values);
  q = permute(reshape(q, {b, t, heads, dh}), {0, 2, 1, 3});  // [B, h, T, dh]
  k = permute(reshape(k, {b, s, heads, dh}), {0, 2, 3, 1});  // [B, h, dh, S]
  v = permute(reshape(v, {b, s, heads, dh}), {0, 2, 1, 3});  // [B, h, S, dh]
  auto weights = softmax(scale(matmul(q, k), static_cast<T>(1.0 / std::sqrt(double(dh)))), -1);
  auto o = permute(matmul(weights, v), {0, 2, 1, 3});
  return linear(params, prefix + ".o", reshape(o, {b, t, d}));
}

// [B, H, W, C] -> [B, (H/p)(W/p), p*p*C], patches in raster order.
template <typename T>
BasicTensor<T> patchify(const BasicTensor<T>& x, std::int64_t p) {
  const std::int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (h % p != 0 || w % p != 0) throw UsageError("image extent not divisible by patch size");
  auto y = reshape(x, {b, h / p, p, w / p, p, c});
  y = permute(y, {0, 1, 3, 2, 4, 5});
  return reshape(y, {b, (h / p) * (w / p), p * p * c});
}

template <typename T>
BasicTensor<T> unpatchify(const BasicTensor<T>& x, std::int64_t h, std::int64_t w, std::int64_t c,
                          std::int64_t p) {
  const std::int64_t b = x.dim(0);
  auto y = reshape(x, {b, h / p, w / p, p, p, c});
  y = permute(y, {0, 1, 3, 2, 4, 5});
  return reshape(y, {b, h, w, c});
}

// [B, dim] embedding of t in [0, 1]: sin and cos of 1000 t at geometrically
// spaced frequencies 10000^(-i / (dim/2)).
template <typename T>
BasicTensor<T> sinusoidal_embedding(const std::vector<double>& t, std::int64_t dim) {
  const std::int64_t half = dim / 2;
  std::vector<T> out(t.size() * static_cast<std::size_t>(dim), T(0));
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (std::int64_t j = 0; j < half; ++j) {
      const double freq = std::exp(-std::log(10000.0) * double(j) / double(half));
      const double arg = 1000.0 * t[i] * freq;
      out[i * dim + j] = static_cast<T>(std::sin(arg));
      out[i * dim + half + j] = static_cast<T>(std::cos(arg));
    }
  }
  return BasicTensor<T>(Shape{static_cast<std::int64_t>(t.size()), dim}, std::move(out));
}

}  // namespace semvar::nn

#endif  // SEMVAR_NN_HPP_
