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

#ifndef SEMVAR_DENOISER_HPP_
#define SEMVAR_DENOISER_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "semvar/config.hpp"
#include "semvar/diffusion.hpp"
#include "semvar/encoders.hpp"
#include "semvar/image.hpp"
#include "semvar/nn.hpp"

namespace semvar::model {

enum class ConditioningMode { kCrossAttention, kFilm, kNone };

std::string to_string(ConditioningMode mode);
ConditioningMode conditioning_mode_from_string(const std::string& name);

// Patch transformer over a single resolution. Defaults are the desk-scale
// configuration: 16x16x3 images, 2x2 patches (64 tokens), width 64, four
// blocks of four heads.
struct DenoiserConfig {
  ImageShape image;
  int patch_size = 2;
  int d_model = 64;
  int num_blocks = 4;
  int num_heads = 4;
  int mlp_ratio = 4;
  ConditioningMode conditioning = ConditioningMode::kCrossAttention;
  int context_tokens = 16;  // T_c
  int context_dim = 32;     // D_c
  int time_dim = 64;
  double context_dropout = 0.1;

  std::int64_t num_patches() const;
  std::int64_t patch_dim() const;
  void validate() const;

  Config to_config() const;
  static DenoiserConfig from_config(const Config& cfg);
};

// Conditioning for a batch. Items with keep[i] == false use the learned null
// context; a missing Conditioning means every item is null.
template <typename T>
struct Conditioning {
  BasicTensor<T> tokens;  // [B, T_c, D_c]
  BasicTensor<T> cls;     // [B, D_c]
  std::vector<bool> keep;
};

template <typename T>
Conditioning<T> make_conditioning(const encoders::ContextBatch& batch, std::vector<bool> keep = {}) {
  Conditioning<T> c{cast<T>(batch.tokens), cast<T>(batch.cls), std::move(keep)};
  if (c.keep.empty()) c.keep.assign(static_cast<std::size_t>(batch.batch()), true);
  return c;
}

// Returns nullopt with probability `prob`, else the context unchanged.
std::optional<encoders::ContextTokens> drop_context(const encoders::ContextTokens& context,
                                                    double prob, Rng& rng);
// Per-item keep flags with the same draw as drop_context.
std::vector<bool> context_keep_mask(std::int64_t batch, double prob, Rng& rng);

// Initialization: linear weights N(0, 1/fan_in), zero biases, unit layer
// norm gains, N(0, 0.02^2) positional and null-context embeddings, and a
// zero output projection so a fresh model predicts v = 0.
template <typename T>
class BasicDenoiser {
 public:
  BasicDenoiser(DenoiserConfig cfg, std::uint64_t seed);

  const DenoiserConfig& config() const { return cfg_; }
  nn::ParameterSet<T>& parameters() { return params_; }
  const nn::ParameterSet<T>& parameters() const { return params_; }

  // z: [B, H, W, C]; t: B times in (0, 1). Returns v-hat with z's shape.
  BasicTensor<T> forward(const BasicTensor<T>& z, const std::vector<double>& t,
                         const Conditioning<T>* cond) const;

  // Binds conditioning for the sampler and the loss.
  diffusion::DenoiseFn<T> bind(const Conditioning<T>* cond) const;

 private:
  BasicTensor<T> modulate(const BasicTensor<T>& x, const BasicTensor<T>& mod, std::int64_t slot) const;

  DenoiserConfig cfg_;
  nn::ParameterSet<T> params_;
};

using Denoiser = BasicDenoiser<float>;
using Denoiser64 = BasicDenoiser<double>;

// Exact parameter count implied by a config.
std::int64_t expected_parameter_count(const DenoiserConfig& cfg);

}  // namespace semvar::model

#endif  // SEMVAR_DENOISER_HPP_
