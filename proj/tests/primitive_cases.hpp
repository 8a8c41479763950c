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

// One finite-difference case per autodiff primitive, usable in either
// precision.

#ifndef SEMVAR_TESTS_PRIMITIVE_CASES_HPP_
#define SEMVAR_TESTS_PRIMITIVE_CASES_HPP_

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "gradcheck.hpp"

namespace semvar::testing {

struct PrimitiveResult {
  std::string name;
  double error = 0.0;
};

// Each case contracts the primitive's output with fixed random weights so
// every output element carries a distinct gradient. Per case the best error
// over `steps` is kept.
template <typename T>
std::vector<PrimitiveResult> primitive_gradchecks(const std::vector<double>& steps, GradcheckOptions opt,
                                                  std::uint64_t seed = 1) {
  using Tn = BasicTensor<T>;
  using Inputs = std::vector<Tn>;
  Rng rng(seed);
  auto r = [&rng](Shape s) { return random_tensor<T>(s, rng); };
  auto dot = [](const Tn& y, const Tn& w) { return sum_all(mul(y, w)); };
  std::vector<PrimitiveResult> out;
  auto check = [&](const std::string& name, Inputs in, std::function<Tn(Inputs&)> fn) {
    double best = std::numeric_limits<double>::infinity();
    for (double h : steps) best = std::min(best, gradcheck<T>(fn, in, h, opt));
    out.push_back({name, best});
  };

  const Tn w34 = r({3, 4}), w234 = r({2, 3, 4});
  check("add", {r({2, 3, 4}), r({3, 1})}, [&](Inputs& v) { return dot(add(v[0], v[1]), w234); });
  check("sub", {r({3, 4}), r({4})}, [&](Inputs& v) { return dot(sub(v[0], v[1]), w34); });
  check("mul", {r({2, 3, 4}), r({1, 4})}, [&](Inputs& v) { return dot(mul(v[0], v[1]), w234); });
  check("scale", {r({3, 4})}, [&](Inputs& v) { return dot(scale(v[0], T(0.7)), w34); });
  check("add_scalar", {r({3, 4})}, [&](Inputs& v) { return dot(mul(add_scalar(v[0], T(2)), v[0]), w34); });
  check("gelu", {r({3, 4})}, [&](Inputs& v) { return dot(gelu(v[0]), w34); });
  check("silu", {r({3, 4})}, [&](Inputs& v) { return dot(silu(v[0]), w34); });
  const Tn w32 = r({3, 2}), w2332 = r({2, 3, 3, 2});
  check("matmul", {r({3, 4}), r({4, 2})}, [&](Inputs& v) { return dot(matmul(v[0], v[1]), w32); });
  check("matmul_batched", {r({2, 3, 3, 4}), r({3, 4, 2})},
        [&](Inputs& v) { return dot(matmul(v[0], v[1]), w2332); });
  check("softmax_last", {r({3, 4})}, [&](Inputs& v) { return dot(softmax(v[0], -1), w34); });
  check("softmax_first", {r({3, 4})}, [&](Inputs& v) { return dot(softmax(v[0], 0), w34); });
  check("layer_norm", {r({3, 4}), r({4}), r({4})},
        [&](Inputs& v) { return dot(layer_norm(v[0], v[1], v[2]), w34); });
  check("normalize", {r({3, 4})}, [&](Inputs& v) { return dot(normalize(v[0]), w34); });
  const Tn w4 = r({4}), w31 = r({3, 1});
  check("sum", {r({3, 4})}, [&](Inputs& v) { return dot(sum(v[0], 0), w4); });
  check("mean", {r({3, 4})}, [&](Inputs& v) { return dot(mean(v[0], 1, true), w31); });
  check("mean_all", {r({3, 4})}, [&](Inputs& v) { return mean_all(mul(v[0], v[0])); });
  const Tn w43 = r({4, 3}), w12 = r({12}), w432 = r({4, 3, 2});
  check("reshape", {r({3, 4})}, [&](Inputs& v) { return dot(reshape(v[0], {12}), w12); });
  check("transpose", {r({3, 4})}, [&](Inputs& v) { return dot(transpose(v[0], 0, 1), w43); });
  check("permute", {r({2, 3, 4})}, [&](Inputs& v) { return dot(permute(v[0], {2, 1, 0}), w432); });
  const Tn w37 = r({3, 7}), w32b = r({3, 2});
  check("concat", {r({3, 4}), r({3, 3})}, [&](Inputs& v) { return dot(concat<T>({v[0], v[1]}, 1), w37); });
  check("slice", {r({3, 4})}, [&](Inputs& v) { return dot(slice(v[0], 1, 1, 3), w32b); });
  return out;
}

}  // namespace semvar::testing

#endif  // SEMVAR_TESTS_PRIMITIVE_CASES_HPP_
