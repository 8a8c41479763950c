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

#include "semvar/encoders.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "semvar/binary_io.hpp"
#include "semvar/episodic.hpp"
#include "semvar/errors.hpp"

namespace semvar::encoders {

namespace {

constexpr std::uint32_t kEmbeddingVersion = 1;
constexpr std::int64_t kEncodeChunk = 256;

}  // namespace

void ContextTokens::validate() const {
  if (num_tokens < 1 || dim < 1) throw DataError("context tokens need T_c >= 1 and D_c >= 1");
  if (static_cast<std::int64_t>(tokens.size()) != num_tokens * dim ||
      static_cast<std::int64_t>(cls.size()) != dim) {
    throw DataError("context tokens: storage does not match dims");
  }
  validate_finite<float>(tokens, "context tokens");
  validate_finite<float>(cls, "context cls");
}

std::string to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::kOracleFactor: return "oracle-factor";
    case EncoderKind::kFrozenRandomVit: return "frozen-random-vit";
    case EncoderKind::kImported: return "imported";
  }
  return "unknown";
}

EncoderKind encoder_kind_from_string(const std::string& name) {
  if (name == "oracle-factor") return EncoderKind::kOracleFactor;
  if (name == "frozen-random-vit") return EncoderKind::kFrozenRandomVit;
  if (name == "imported") return EncoderKind::kImported;
  throw UsageError("unknown encoder kind '" + name + "'");
}

std::int64_t EncoderSpec::num_tokens() const {
  return static_cast<std::int64_t>(image.height / patch_size) * (image.width / patch_size);
}

void EncoderSpec::validate() const {
  if (patch_size < 1 || image.height % patch_size != 0 || image.width % patch_size != 0) {
    throw UsageError("encoder patch size must divide the image extents");
  }
  if (width < 1 || depth < 0 || heads < 1 || width % heads != 0) {
    throw UsageError("encoder width must be positive and divisible by heads");
  }
  if (kind == EncoderKind::kOracleFactor && width < OracleLayout::kMinDim) {
    throw UsageError("oracle-factor encoder needs width >= " + std::to_string(OracleLayout::kMinDim));
  }
  if (kind == EncoderKind::kImported && imported_path.empty()) {
    throw UsageError("imported encoder needs an embedding file path");
  }
}

std::string EncoderSpec::id() const {
  std::ostringstream out;
  out << to_string(kind);
  switch (kind) {
    case EncoderKind::kOracleFactor:
      out << "/p" << patch_size << "/w" << width;
      break;
    case EncoderKind::kFrozenRandomVit:
      out << "/seed=" << seed << "/p" << patch_size << "/d" << depth << "/w" << width;
      break;
    case EncoderKind::kImported:
      out << "/" << imported_path.filename().string();
      break;
  }
  return out.str();
}

Config EncoderSpec::to_config() const {
  Config c;
  c.set("kind", to_string(kind));
  c.set("seed", seed);
  c.set("patch_size", patch_size);
  c.set("depth", depth);
  c.set("width", width);
  c.set("heads", heads);
  c.set("image_height", image.height);
  c.set("image_width", image.width);
  c.set("image_channels", image.channels);
  if (!imported_path.empty()) c.set("imported_path", imported_path.string());
  return c;
}

EncoderSpec EncoderSpec::from_config(const Config& cfg) {
  EncoderSpec s;
  s.kind = encoder_kind_from_string(cfg.get_string("kind", to_string(s.kind)));
  s.seed = cfg.get_u64("seed", s.seed);
  s.patch_size = static_cast<int>(cfg.get_int("patch_size", s.patch_size));
  s.depth = static_cast<int>(cfg.get_int("depth", s.depth));
  s.width = static_cast<int>(cfg.get_int("width", s.width));
  s.heads = static_cast<int>(cfg.get_int("heads", s.heads));
  s.image.height = static_cast<int>(cfg.get_int("image_height", s.image.height));
  s.image.width = static_cast<int>(cfg.get_int("image_width", s.image.width));
  s.image.channels = static_cast<int>(cfg.get_int("image_channels", s.image.channels));
  s.imported_path = cfg.get_string("imported_path", "");
  s.validate();
  return s;
}

ContextBatch stack_contexts(std::span<const ContextTokens* const> items) {
  if (items.empty()) throw UsageError("stack_contexts: empty batch");
  const std::int64_t b = static_cast<std::int64_t>(items.size());
  const std::int64_t t = items[0]->num_tokens, d = items[0]->dim;
  std::vector<float> tokens, cls;
  tokens.reserve(static_cast<std::size_t>(b * t * d));
  cls.reserve(static_cast<std::size_t>(b * d));
  for (const auto* item : items) {
    if (item->num_tokens != t || item->dim != d) throw UsageError("stack_contexts: dims differ");
    tokens.insert(tokens.end(), item->tokens.begin(), item->tokens.end());
    cls.insert(cls.end(), item->cls.begin(), item->cls.end());
  }
  return {Tensor({b, t, d}, std::move(tokens)), Tensor({b, d}, std::move(cls))};
}

ContextBatch repeat_context(const ContextTokens& item, std::int64_t count) {
  std::vector<const ContextTokens*> items(static_cast<std::size_t>(count), &item);
  return stack_contexts(items);
}

// ---- Encoder ----

Encoder::Encoder(EncoderSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.kind == EncoderKind::kFrozenRandomVit) {
    Rng rng(derive_seed(spec_.seed, "frozen-random-vit"));
    const std::int64_t w = spec_.width;
    const std::int64_t patch_dim =
        static_cast<std::int64_t>(spec_.patch_size) * spec_.patch_size * spec_.image.channels;
    nn::add_linear(vit_, "patch", patch_dim, w, rng);
    vit_.add("pos", nn::normal_tensor<float>({spec_.num_tokens(), w}, 0.5, rng));
    for (int i = 0; i < spec_.depth; ++i) {
      const std::string p = "block" + std::to_string(i);
      nn::add_layer_norm(vit_, p + ".ln1", w);
      nn::add_attention(vit_, p + ".attn", w, w, rng);
      nn::add_layer_norm(vit_, p + ".ln2", w);
      nn::add_linear(vit_, p + ".mlp1", w, 2 * w, rng);
      nn::add_linear(vit_, p + ".mlp2", 2 * w, w, rng);
    }
    // Frozen: never part of a gradient computation.
    for (auto& [name, t] : vit_.entries()) t.set_requires_grad(false);
  } else if (spec_.kind == EncoderKind::kImported) {
    imported_ = std::make_unique<EmbeddingTable>(EmbeddingTable::read(spec_.imported_path));
  }
}

Encoder::~Encoder() = default;
Encoder::Encoder(Encoder&&) noexcept = default;
Encoder& Encoder::operator=(Encoder&&) noexcept = default;

ContextTokens Encoder::encode(const EncoderInput& input) const {
  return encode_batch(std::span<const EncoderInput>(&input, 1)).front();
}

std::vector<ContextTokens> Encoder::encode_batch(std::span<const EncoderInput> inputs) const {
  for (const auto& in : inputs) {
    if (spec_.kind != EncoderKind::kImported &&
        static_cast<std::int64_t>(in.pixels.size()) != spec_.image.size()) {
      throw UsageError("encoder expects " + spec_.image.str() + " images");
    }
  }
  std::vector<ContextTokens> out;
  out.reserve(inputs.size());
  switch (spec_.kind) {
    case EncoderKind::kOracleFactor:
      for (const auto& in : inputs) out.push_back(encode_oracle(in));
      break;
    case EncoderKind::kFrozenRandomVit:
      for (std::size_t start = 0; start < inputs.size(); start += kEncodeChunk) {
        const auto n = std::min<std::size_t>(kEncodeChunk, inputs.size() - start);
        auto chunk = encode_vit(inputs.subspan(start, n));
        for (auto& c : chunk) out.push_back(std::move(c));
      }
      break;
    case EncoderKind::kImported:
      for (const auto& in : inputs) {
        if (!in.image_id) throw DataError("imported encoder needs an image id");
        ContextTokens c = imported_->at(*in.image_id);
        if (c.num_tokens != spec_.num_tokens() || c.dim != spec_.dim()) {
          throw DataError("imported embedding dims do not match the encoder spec");
        }
        c.source_id = spec_.id();
        out.push_back(std::move(c));
      }
      break;
  }
  return out;
}

ContextTokens Encoder::encode_oracle(const EncoderInput& input) const {
  if (input.factors == nullptr) throw DataError("oracle-factor encoder needs image factors");
  const ImageFactors& f = *input.factors;
  if (f.class_id >= static_cast<std::uint32_t>(OracleLayout::kNumClasses)) {
    throw DataError("oracle-factor encoder: class id out of range");
  }
  const int p = spec_.patch_size;
  const int rows = spec_.image.height / p, cols = spec_.image.width / p;
  const int c = spec_.image.channels;
  const std::int64_t d = spec_.dim();
  ContextTokens out;
  out.num_tokens = spec_.num_tokens();
  out.dim = d;
  out.tokens.assign(static_cast<std::size_t>(out.num_tokens * d), 0.0f);
  out.cls.assign(static_cast<std::size_t>(d), 0.0f);
  out.source_id = spec_.id();

  std::vector<float> semantic(OracleLayout::kNuisance, 0.0f);
  semantic[OracleLayout::kClass + f.class_id] = 1.0f;
  const double angle = 2.0 * std::numbers::pi * f.hue;
  semantic[OracleLayout::kHue] = static_cast<float>(std::cos(angle));
  semantic[OracleLayout::kHue + 1] = static_cast<float>(std::sin(angle));
  const float nuisance[6] = {
      2.0f * f.pos_x - 1.0f,
      2.0f * f.pos_y - 1.0f,
      (f.scale - 0.3f) * 10.0f,
      static_cast<float>(std::cos(f.rotation)),
      static_cast<float>(std::sin(f.rotation)),
      f.noise_level * 20.0f,
  };
  for (int r = 0; r < rows; ++r) {
    for (int q = 0; q < cols; ++q) {
      float* tok = out.tokens.data() + (static_cast<std::int64_t>(r) * cols + q) * d;
      std::copy(semantic.begin(), semantic.end(), tok);
      std::copy(std::begin(nuisance), std::end(nuisance), tok + OracleLayout::kNuisance);
      for (int ch = 0; ch < std::min(c, 3); ++ch) {
        double acc = 0.0;
        for (int y = r * p; y < (r + 1) * p; ++y)
          for (int x = q * p; x < (q + 1) * p; ++x)
            acc += input.pixels[(static_cast<std::size_t>(y) * spec_.image.width + x) * c + ch];
        tok[OracleLayout::kCell + ch] = static_cast<float>(acc / (p * p));
      }
      tok[OracleLayout::kPosition] = rows > 1 ? 2.0f * r / (rows - 1) - 1.0f : 0.0f;
      tok[OracleLayout::kPosition + 1] = cols > 1 ? 2.0f * q / (cols - 1) - 1.0f : 0.0f;
    }
  }
  std::copy(semantic.begin(), semantic.end(), out.cls.begin());
  return out;
}

std::vector<ContextTokens> Encoder::encode_vit(std::span<const EncoderInput> inputs) const {
  const auto b = static_cast<std::int64_t>(inputs.size());
  const auto& img = spec_.image;
  std::vector<float> pixels;
  pixels.reserve(static_cast<std::size_t>(b * img.size()));
  for (const auto& in : inputs) pixels.insert(pixels.end(), in.pixels.begin(), in.pixels.end());
  Tensor x({b, img.height, img.width, img.channels}, std::move(pixels));

  const std::int64_t heads = spec_.heads;
  auto h = add(nn::linear(vit_, "patch", nn::patchify(x, spec_.patch_size)), vit_.get("pos"));
  for (int i = 0; i < spec_.depth; ++i) {
    const std::string p = "block" + std::to_string(i);
    auto a = nn::layer_norm(vit_, p + ".ln1", h);
    h = add(h, nn::attention(vit_, p + ".attn", a, a, heads));
    auto m = nn::layer_norm(vit_, p + ".ln2", h);
    h = add(h, nn::linear(vit_, p + ".mlp2", gelu(nn::linear(vit_, p + ".mlp1", m))));
  }
  h = normalize(h);
  const auto cls = mean(h, 1);

  const std::int64_t t = spec_.num_tokens(), d = spec_.dim();
  std::vector<ContextTokens> out(inputs.size());
  for (std::int64_t i = 0; i < b; ++i) {
    auto& c = out[i];
    c.num_tokens = t;
    c.dim = d;
    c.tokens.assign(h.data().begin() + i * t * d, h.data().begin() + (i + 1) * t * d);
    c.cls.assign(cls.data().begin() + i * d, cls.data().begin() + (i + 1) * d);
    c.source_id = spec_.id();
  }
  return out;
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw UsageError("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw UsageError("cosine_similarity: zero-norm vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

// ---- EmbeddingTable ----

void EmbeddingTable::insert(std::uint64_t image_id, ContextTokens tokens) {
  if (records_.empty() && num_tokens_ == 0) {
    num_tokens_ = tokens.num_tokens;
    dim_ = tokens.dim;
  }
  if (tokens.num_tokens != num_tokens_ || tokens.dim != dim_) {
    throw DataError("embedding table: record dims differ from table dims");
  }
  records_[image_id] = std::move(tokens);
}

const ContextTokens& EmbeddingTable::at(std::uint64_t image_id) const {
  auto it = records_.find(image_id);
  if (it == records_.end()) throw DataError("no embedding for image " + std::to_string(image_id));
  return it->second;
}

std::string EmbeddingTable::serialize() const {
  std::ostringstream buf;
  BinaryWriter w(buf);
  w.magic("EMBD");
  w.u32(kEmbeddingVersion);
  w.u64(records_.size());
  w.u32(static_cast<std::uint32_t>(num_tokens_));
  w.u32(static_cast<std::uint32_t>(dim_));
  for (const auto& [id, rec] : records_) {
    w.u64(id);
    w.f32s(rec.tokens);
    w.f32s(rec.cls);
  }
  return buf.str();
}

void EmbeddingTable::write(const std::filesystem::path& path) const {
  write_file_atomic(path, serialize());
}

EmbeddingTable EmbeddingTable::deserialize(const std::string& bytes, const std::string& source) {
  std::istringstream in(bytes);
  BinaryReader r(in, source);
  r.expect_magic("EMBD");
  const auto version = r.u32();
  if (version != kEmbeddingVersion) throw DataError(source + ": unsupported embedding version");
  const auto n = r.u64();
  const std::int64_t t = r.u32();
  const std::int64_t d = r.u32();
  EmbeddingTable table(t, d);
  for (std::uint64_t i = 0; i < n; ++i) {
    ContextTokens c;
    c.num_tokens = t;
    c.dim = d;
    const auto id = r.u64();
    c.tokens.resize(static_cast<std::size_t>(t * d));
    c.cls.resize(static_cast<std::size_t>(d));
    r.f32s(c.tokens);
    r.f32s(c.cls);
    c.source_id = "imported/" + source;
    table.insert(id, std::move(c));
  }
  if (!r.at_end()) throw DataError(source + ": trailing bytes after embedding records");
  return table;
}

EmbeddingTable EmbeddingTable::read(const std::filesystem::path& path) {
  return deserialize(read_file(path), path.filename().string());
}

EmbeddingTable embed_corpus(const EncoderSpec& spec, const data::Corpus& corpus) {
  if (corpus.num_images() > 0 && !(corpus.image_shape() == spec.image)) {
    throw DataError("shard images are " + corpus.image_shape().str() + " but encoder expects " +
                    spec.image.str());
  }
  const Encoder encoder(spec);
  std::vector<EncoderInput> inputs;
  inputs.reserve(corpus.num_images());
  for (std::uint64_t id = 0; id < corpus.num_images(); ++id) {
    inputs.push_back({corpus.image(id), &corpus.factors(id), id});
  }
  const auto encoded = encoder.encode_batch(inputs);
  EmbeddingTable table(spec.num_tokens(), spec.dim());
  for (std::uint64_t id = 0; id < encoded.size(); ++id) table.insert(id, encoded[id]);
  if (table.size() != corpus.num_images()) throw DataError("embedding count mismatch");
  return table;
}

std::uint64_t precompute_embeddings(const EncoderSpec& spec, const std::filesystem::path& shard_path,
                                    const std::filesystem::path& out_path) {
  const auto table = embed_corpus(spec, data::Corpus::read(shard_path));
  table.write(out_path);
  return table.size();
}

}  // namespace semvar::encoders
