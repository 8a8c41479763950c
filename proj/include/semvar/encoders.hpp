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

#ifndef SEMVAR_ENCODERS_HPP_
#define SEMVAR_ENCODERS_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semvar/config.hpp"
#include "semvar/image.hpp"
#include "semvar/nn.hpp"

namespace semvar::data {
class Corpus;
}  // namespace semvar::data

namespace semvar::encoders {

// Frozen conditioning representation of one image: a token matrix
// [num_tokens, dim] plus a global (CLS) vector of length dim.
struct ContextTokens {
  std::int64_t num_tokens = 0;
  std::int64_t dim = 0;
  std::vector<float> tokens;
  std::vector<float> cls;
  std::string source_id;

  std::span<const float> token(std::int64_t i) const {
    return std::span<const float>(tokens).subspan(static_cast<std::size_t>(i * dim),
                                                  static_cast<std::size_t>(dim));
  }
  void validate() const;
  bool operator==(const ContextTokens&) const = default;
};

enum class EncoderKind { kOracleFactor, kFrozenRandomVit, kImported };

std::string to_string(EncoderKind kind);
EncoderKind encoder_kind_from_string(const std::string& name);

// Fully determines an encoder. Token count is (H / patch)(W / patch).
struct EncoderSpec {
  EncoderKind kind = EncoderKind::kOracleFactor;
  std::uint64_t seed = 0;
  int patch_size = 4;
  int depth = 2;
  int width = 32;  // D_c
  int heads = 4;
  ImageShape image;
  std::filesystem::path imported_path;  // kImported only

  std::int64_t num_tokens() const;
  std::int64_t dim() const { return width; }
  void validate() const;
  // "<kind>/seed=<s>/p<patch>/d<depth>/w<width>"
  std::string id() const;

  Config to_config() const;
  static EncoderSpec from_config(const Config& cfg);
};

// Layout of oracle-factor token dimensions. The CLS vector keeps only the
// semantic block (class one-hot and hue); nuisance, cell and position
// blocks are zeroed in it.
struct OracleLayout {
  static constexpr int kNumClasses = 8;
  static constexpr int kClass = 0;      // one-hot, 8 dims
  static constexpr int kHue = 8;        // cos, sin of 2 pi hue
  static constexpr int kNuisance = 10;  // pos_x, pos_y, scale, cos rot, sin rot, noise
  static constexpr int kCell = 16;      // mean colour of the token's cell, 3 dims
  static constexpr int kPosition = 19;  // cell row, cell column in [-1, 1]
  static constexpr int kMinDim = 21;
};

// Everything an encoder may read about one image.
struct EncoderInput {
  std::span<const float> pixels;  // [H, W, C]
  const ImageFactors* factors = nullptr;  // required by oracle-factor
  std::optional<std::uint64_t> image_id;  // required by imported
};

// Stacked contexts for a batch: tokens [B, T_c, D_c] and cls [B, D_c].
struct ContextBatch {
  Tensor tokens;
  Tensor cls;

  std::int64_t batch() const { return tokens.dim(0); }
};

ContextBatch stack_contexts(std::span<const ContextTokens* const> items);
// `item` repeated `count` times.
ContextBatch repeat_context(const ContextTokens& item, std::int64_t count);

class EmbeddingTable;

class Encoder {
 public:
  explicit Encoder(EncoderSpec spec);
  ~Encoder();
  Encoder(Encoder&&) noexcept;
  Encoder& operator=(Encoder&&) noexcept;

  const EncoderSpec& spec() const { return spec_; }

  ContextTokens encode(const EncoderInput& input) const;
  // Batched form; result order follows `inputs`.
  std::vector<ContextTokens> encode_batch(std::span<const EncoderInput> inputs) const;

 private:
  ContextTokens encode_oracle(const EncoderInput& input) const;
  std::vector<ContextTokens> encode_vit(std::span<const EncoderInput> inputs) const;

  EncoderSpec spec_;
  nn::ParameterSet<float> vit_;
  std::unique_ptr<EmbeddingTable> imported_;
};

// a . b / (|a| |b|); throws UsageError on length mismatch or a zero norm.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

// In-memory form of an embedding file.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::int64_t num_tokens, std::int64_t dim) : num_tokens_(num_tokens), dim_(dim) {}

  void insert(std::uint64_t image_id, ContextTokens tokens);
  bool contains(std::uint64_t image_id) const { return records_.count(image_id) != 0; }
  // Throws DataError when absent.
  const ContextTokens& at(std::uint64_t image_id) const;

  std::size_t size() const { return records_.size(); }
  std::int64_t num_tokens() const { return num_tokens_; }
  std::int64_t dim() const { return dim_; }
  const std::map<std::uint64_t, ContextTokens>& records() const { return records_; }

  // Binary layout, little-endian: "EMBD", u32 version, u64 N, u32 T_c,
  // u32 D_c, then N x (u64 image_id, T_c*D_c f32 tokens, D_c f32 cls),
  // records in ascending image_id order.
  std::string serialize() const;
  void write(const std::filesystem::path& path) const;
  static EmbeddingTable read(const std::filesystem::path& path);
  static EmbeddingTable deserialize(const std::string& bytes, const std::string& source);

 private:
  std::int64_t num_tokens_ = 0;
  std::int64_t dim_ = 0;
  std::map<std::uint64_t, ContextTokens> records_;
};

// Encodes every image of a corpus, keyed by image id.
EmbeddingTable embed_corpus(const EncoderSpec& spec, const data::Corpus& corpus);

// Encodes every image of an episode shard and writes an embedding file.
// Returns the number of records written.
std::uint64_t precompute_embeddings(const EncoderSpec& spec, const std::filesystem::path& shard_path,
                                    const std::filesystem::path& out_path);

}  // namespace semvar::encoders

#endif  // SEMVAR_ENCODERS_HPP_
