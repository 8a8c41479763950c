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

#include "semvar/denoiser.hpp"

#include "semvar/errors.hpp"

namespace semvar::model {

std::string to_string(ConditioningMode mode) {
  switch (mode) {
    case ConditioningMode::kCrossAttention: return "cross-attention";
    case ConditioningMode::kFilm: return "film";
    case ConditioningMode::kNone: return "none";
  }
  return "unknown";
}

ConditioningMode conditioning_mode_from_string(const std::string& name) {
  if (name == "cross-attention") return ConditioningMode::kCrossAttention;
  if (name == "film") return ConditioningMode::kFilm;
  if (name == "none") return ConditioningMode::kNone;
  throw UsageError("unknown conditioning mode '" + name + "'");
}

std::int64_t DenoiserConfig::num_patches() const {
  return static_cast<std::int64_t>(image.height / patch_size) * (image.width / patch_size);
}

std::int64_t DenoiserConfig::patch_dim() const {
  return static_cast<std::int64_t>(patch_size) * patch_size * image.channels;
}

void DenoiserConfig::validate() const {
  if (image.height < 1 || image.width < 1 || image.channels < 1) throw UsageError("bad image shape");
  if (patch_size < 1 || image.height % patch_size || image.width % patch_size) {
    throw UsageError("image extents must be divisible by the patch size");
  }
  if (d_model < 1 || num_heads < 1 || d_model % num_heads) {
    throw UsageError("d_model must be divisible by num_heads");
  }
  if (num_blocks < 0 || mlp_ratio < 1) throw UsageError("bad block configuration");
  if (context_tokens < 1 || context_dim < 1) throw UsageError("context dims must be positive");
  if (time_dim < 2 || time_dim % 2) throw UsageError("time_dim must be a positive even number");
  if (!(context_dropout >= 0.0 && context_dropout <= 1.0)) {
    throw UsageError("context dropout must lie in [0, 1]");
  }
}

Config DenoiserConfig::to_config() const {
  Config c;
  c.set("image_height", image.height);
  c.set("image_width", image.width);
  c.set("image_channels", image.channels);
  c.set("patch_size", patch_size);
  c.set("d_model", d_model);
  c.set("num_blocks", num_blocks);
  c.set("num_heads", num_heads);
  c.set("mlp_ratio", mlp_ratio);
  c.set("conditioning", to_string(conditioning));
  c.set("context_tokens", context_tokens);
  c.set("context_dim", context_dim);
  c.set("time_dim", time_dim);
  c.set("context_dropout", context_dropout);
  return c;
}

DenoiserConfig DenoiserConfig::from_config(const Config& cfg) {
  DenoiserConfig d;
  d.image.height = static_cast<int>(cfg.get_int("image_height", d.image.height));
  d.image.width = static_cast<int>(cfg.get_int("image_width", d.image.width));
  d.image.channels = static_cast<int>(cfg.get_int("image_channels", d.image.channels));
  d.patch_size = static_cast<int>(cfg.get_int("patch_size", d.patch_size));
  d.d_model = static_cast<int>(cfg.get_int("d_model", d.d_model));
  d.num_blocks = static_cast<int>(cfg.get_int("num_blocks", d.num_blocks));
  d.num_heads = static_cast<int>(cfg.get_int("num_heads", d.num_heads));
  d.mlp_ratio = static_cast<int>(cfg.get_int("mlp_ratio", d.mlp_ratio));
  d.conditioning = conditioning_mode_from_string(cfg.get_string("conditioning", to_string(d.conditioning)));
  d.context_tokens = static_cast<int>(cfg.get_int("context_tokens", d.context_tokens));
  d.context_dim = static_cast<int>(cfg.get_int("context_dim", d.context_dim));
  d.time_dim = static_cast<int>(cfg.get_int("time_dim", d.time_dim));
  d.context_dropout = cfg.get_double("context_dropout", d.context_dropout);
  d.validate();
  return d;
}

std::optional<encoders::ContextTokens> drop_context(const encoders::ContextTokens& context,
                                                    double prob, Rng& rng) {
  if (!(prob >= 0.0 && prob <= 1.0)) throw UsageError("drop probability must lie in [0, 1]");
  if (rng.bernoulli(prob)) return std::nullopt;
  return context;
}

std::vector<bool> context_keep_mask(std::int64_t batch, double prob, Rng& rng) {
  if (!(prob >= 0.0 && prob <= 1.0)) throw UsageError("drop probability must lie in [0, 1]");
  std::vector<bool> keep(static_cast<std::size_t>(batch));
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = !rng.bernoulli(prob);
  return keep;
}

std::int64_t expected_parameter_count(const DenoiserConfig& cfg) {
  const std::int64_t d = cfg.d_model, p = cfg.patch_dim(), n = cfg.num_patches();
  const std::int64_t tc = cfg.context_tokens, dc = cfg.context_dim, td = cfg.time_dim;
  const std::int64_t hidden = d * cfg.mlp_ratio;
  auto lin = [](std::int64_t in, std::int64_t out) { return in * out + out; };
  std::int64_t total = lin(p, d) + n * d;      // patch embedding, positions
  total += lin(td, d) + lin(d, d);             // time MLP
  std::int64_t block = lin(d, 4 * d)           // modulation
                       + 4 * lin(d, d) - d     // self-attention, keys unbiased
                       + lin(d, hidden) + lin(hidden, d);
  switch (cfg.conditioning) {
    case ConditioningMode::kCrossAttention:
      total += tc * dc;                                        // null tokens
      block += 2 * d + 2 * lin(d, d) + 2 * lin(dc, d) - d;      // norm, q/o, k/v
      break;
    case ConditioningMode::kFilm:
      total += dc + lin(dc, d);  // null cls, cls projection
      break;
    case ConditioningMode::kNone:
      break;
  }
  total += cfg.num_blocks * block;
  total += lin(d, 2 * d) + lin(d, p);  // final modulation, output projection
  return total;
}

template <typename T>
BasicDenoiser<T>::BasicDenoiser(DenoiserConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(derive_seed(seed, "denoiser-init"));
  const std::int64_t d = cfg_.d_model;
  const std::int64_t hidden = d * cfg_.mlp_ratio;
  nn::add_linear(params_, "patch_embed", cfg_.patch_dim(), d, rng);
  params_.add("pos", nn::normal_tensor<T>({cfg_.num_patches(), d}, 0.02, rng));
  nn::add_linear(params_, "time.mlp1", cfg_.time_dim, d, rng);
  nn::add_linear(params_, "time.mlp2", d, d, rng);
  if (cfg_.conditioning == ConditioningMode::kCrossAttention) {
    params_.add("null_tokens", nn::normal_tensor<T>({cfg_.context_tokens, cfg_.context_dim}, 0.02, rng));
  } else if (cfg_.conditioning == ConditioningMode::kFilm) {
    params_.add("null_cls", nn::normal_tensor<T>({cfg_.context_dim}, 0.02, rng));
    nn::add_linear(params_, "cls_proj", cfg_.context_dim, d, rng);
  }
  for (int i = 0; i < cfg_.num_blocks; ++i) {
    const std::string b = "block" + std::to_string(i);
    nn::add_linear(params_, b + ".mod", d, 4 * d, rng);
    nn::add_attention(params_, b + ".attn", d, d, rng);
    if (cfg_.conditioning == ConditioningMode::kCrossAttention) {
      nn::add_layer_norm(params_, b + ".ln_cross", d);
      nn::add_attention(params_, b + ".cross", d, cfg_.context_dim, rng);
    }
    nn::add_linear(params_, b + ".mlp1", d, hidden, rng);
    nn::add_linear(params_, b + ".mlp2", hidden, d, rng);
  }
  nn::add_linear(params_, "final.mod", d, 2 * d, rng);
  nn::add_linear(params_, "out", d, cfg_.patch_dim(), rng, /*zero_init=*/true);
}

// normalize(x) * (1 + scale) + shift, with (shift, scale) at `slot` of the
// packed modulation [B, 1, k * d].
template <typename T>
BasicTensor<T> BasicDenoiser<T>::modulate(const BasicTensor<T>& x, const BasicTensor<T>& mod,
                                          std::int64_t slot) const {
  const std::int64_t d = cfg_.d_model;
  const auto shift = slice(mod, 2, 2 * slot * d, (2 * slot + 1) * d);
  const auto scl = slice(mod, 2, (2 * slot + 1) * d, (2 * slot + 2) * d);
  return add(mul(normalize(x), add_scalar(scl, T(1))), shift);
}

template <typename T>
BasicTensor<T> BasicDenoiser<T>::forward(const BasicTensor<T>& z, const std::vector<double>& t,
                                         const Conditioning<T>* cond) const {
  const auto& img = cfg_.image;
  if (z.rank() != 4 || z.dim(1) != img.height || z.dim(2) != img.width || z.dim(3) != img.channels) {
    throw UsageError("denoiser input must be [B, " + std::to_string(img.height) + ", " +
                     std::to_string(img.width) + ", " + std::to_string(img.channels) + "], got " +
                     shape_str(z.shape()));
  }
  const std::int64_t b = z.dim(0), d = cfg_.d_model;
  if (static_cast<std::int64_t>(t.size()) != b) throw UsageError("denoiser: one time per batch item");
  if (cond) {
    if (cond->keep.size() != static_cast<std::size_t>(b) || cond->tokens.dim(0) != b ||
        cond->cls.dim(0) != b) {
      throw UsageError("denoiser: conditioning batch size mismatch");
    }
    if (cond->tokens.dim(1) != cfg_.context_tokens || cond->tokens.dim(2) != cfg_.context_dim ||
        cond->cls.dim(1) != cfg_.context_dim) {
      throw UsageError("denoiser: context dims do not match the config");
    }
  }

  // Per-item selector between the real and the null context.
  BasicTensor<T> keep({b, 1, 1}, T(0));
  if (cond) {
    for (std::int64_t i = 0; i < b; ++i) keep.mutable_data()[i] = cond->keep[i] ? T(1) : T(0);
  }
  const auto drop = add_scalar(scale(keep, T(-1)), T(1));

  auto x = add(nn::linear(params_, "patch_embed", nn::patchify(z, cfg_.patch_size)), params_.get("pos"));
  auto c = nn::linear(params_, "time.mlp2",
                      silu(nn::linear(params_, "time.mlp1", nn::sinusoidal_embedding<T>(t, cfg_.time_dim))));

  BasicTensor<T> context;
  if (cfg_.conditioning == ConditioningMode::kFilm) {
    const auto keep2 = reshape(keep, {b, 1});
    const auto drop2 = reshape(drop, {b, 1});
    auto cls = mul(drop2, params_.get("null_cls"));
    if (cond) cls = add(mul(cond->cls, keep2), cls);
    c = add(c, nn::linear(params_, "cls_proj", normalize(cls)));
  } else if (cfg_.conditioning == ConditioningMode::kCrossAttention) {
    context = mul(drop, params_.get("null_tokens"));
    if (cond) context = add(mul(cond->tokens, keep), context);
  }
  const auto act = silu(c);

  for (int i = 0; i < cfg_.num_blocks; ++i) {
    const std::string blk = "block" + std::to_string(i);
    const auto mod = reshape(nn::linear(params_, blk + ".mod", act), {b, 1, 4 * d});
    const auto h = modulate(x, mod, 0);
    x = add(x, nn::attention(params_, blk + ".attn", h, h, cfg_.num_heads));
    if (cfg_.conditioning == ConditioningMode::kCrossAttention) {
      x = add(x, nn::attention(params_, blk + ".cross", nn::layer_norm(params_, blk + ".ln_cross", x),
                               context, cfg_.num_heads));
    }
    const auto h2 = modulate(x, mod, 1);
    x = add(x, nn::linear(params_, blk + ".mlp2", gelu(nn::linear(params_, blk + ".mlp1", h2))));
  }
  const auto fmod = reshape(nn::linear(params_, "final.mod", act), {b, 1, 2 * d});
  const auto out = nn::linear(params_, "out", modulate(x, fmod, 0));
  return nn::unpatchify(out, img.height, img.width, img.channels, cfg_.patch_size);
}

template <typename T>
diffusion::DenoiseFn<T> BasicDenoiser<T>::bind(const Conditioning<T>* cond) const {
  return [this, cond](const BasicTensor<T>& z, const std::vector<double>& t) {
    return forward(z, t, cond);
  };
}

template class BasicDenoiser<float>;
template class BasicDenoiser<double>;

}  // namespace semvar::model
