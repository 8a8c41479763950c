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

// Small denoiser fixtures shared by the unit tests and the acceptance runner.

#ifndef SEMVAR_TESTS_DENOISER_CHECK_HPP_
#define SEMVAR_TESTS_DENOISER_CHECK_HPP_

#include <algorithm>
#include <cmath>
#include <vector>

#include "gradcheck.hpp"
#include "semvar/denoiser.hpp"

namespace semvar::testing {

using model::BasicDenoiser;
using model::ConditioningMode;
using model::Conditioning;
using model::DenoiserConfig;

inline DenoiserConfig tiny(ConditioningMode mode) {
  DenoiserConfig cfg;
  cfg.image = {4, 4, 3};
  cfg.patch_size = 2;
  cfg.d_model = 8;
  cfg.num_blocks = 1;
  cfg.num_heads = 2;
  cfg.mlp_ratio = 2;
  cfg.conditioning = mode;
  cfg.context_tokens = 3;
  cfg.context_dim = 5;
  cfg.time_dim = 6;
  return cfg;
}

template <typename T>
Conditioning<T> random_conditioning(const DenoiserConfig& cfg, std::int64_t batch, Rng& rng) {
  return {random_tensor<T>({batch, cfg.context_tokens, cfg.context_dim}, rng),
          random_tensor<T>({batch, cfg.context_dim}, rng), std::vector<bool>(batch, true)};
}

// The output projection starts at zero, which would hide every upstream
// gradient; give it random weights.
template <typename T>
void perturb_output(BasicDenoiser<T>& model, Rng& rng) {
  for (auto& [name, p] : model.parameters().entries()) {
    if (name.rfind("out.", 0) == 0) {
      for (auto& v : p.mutable_data()) v = static_cast<T>(0.3 * rng.normal());
    }
  }
}

// Worst per-tensor error over all parameters. Each tensor takes the best of
// `steps`: tensors behind sharp curvature need small steps while 32-bit
// round-off favours large ones, and a wrong gradient disagrees at every step.
template <typename T>
double denoiser_gradcheck(ConditioningMode mode, std::int64_t context_dim, std::vector<double> steps,
                          testing::GradcheckOptions opt, std::uint64_t seed) {
  auto cfg = tiny(mode);
  cfg.context_dim = context_dim;
  BasicDenoiser<T> model(cfg, seed);
  Rng rng(seed);
  perturb_output(model, rng);
  for (auto& [name, p] : model.parameters().entries()) {
    if (name.rfind("null_", 0) == 0) {
      for (auto& v : p.mutable_data()) v = static_cast<T>(0.3 * rng.normal());
    }
  }
  auto cond = random_conditioning<T>(cfg, 2, rng);
  cond.keep = {true, false};
  const auto z = random_tensor<T>({2, 4, 4, 3}, rng);
  const auto w = random_tensor<T>({2, 4, 4, 3}, rng);
  auto loss = [&](auto&) { return sum_all(mul(model.forward(z, {0.35, 0.7}, &cond), w)); };
  double worst = 0.0;
  for (auto& e : model.parameters().entries()) {
    std::vector<BasicTensor<T>> one{e.second};
    double best = INFINITY;
    for (double h : steps) best = std::min(best, gradcheck(loss, one, h, opt));
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace semvar::testing

#endif  // SEMVAR_TESTS_DENOISER_CHECK_HPP_
