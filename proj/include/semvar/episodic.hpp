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

#ifndef SEMVAR_EPISODIC_HPP_
#define SEMVAR_EPISODIC_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semvar/encoders.hpp"
#include "semvar/image.hpp"
#include "semvar/random.hpp"
#include "semvar/tensor.hpp"

namespace semvar::data {

inline constexpr int kNumShapeClasses = 8;

// A group of images rendered from the same class and hue with independent
// nuisance factors.
struct EpisodeRecord {
  std::uint64_t episode_id = 0;
  std::uint32_t class_id = 0;
  float hue = 0.0f;
  std::vector<std::uint64_t> members;  // image ids
  std::vector<ImageFactors> factors;   // per member, class/hue copied from the episode
};

// Images plus episode metadata. Image ids are indices into the pixel array.
class Corpus {
 public:
  Corpus() = default;
  Corpus(ImageShape image, std::vector<float> pixels, std::vector<EpisodeRecord> episodes);

  const ImageShape& image_shape() const { return image_; }
  std::uint64_t num_images() const;
  const std::vector<EpisodeRecord>& episodes() const { return episodes_; }
  const std::vector<float>& pixels() const { return pixels_; }

  std::span<const float> image(std::uint64_t id) const;
  const ImageFactors& factors(std::uint64_t id) const;
  // Index into episodes() of the episode holding image `id`.
  std::size_t episode_index(std::uint64_t id) const;

  // Stacks the given images into [B, H, W, C].
  Tensor gather(std::span<const std::uint64_t> ids) const;

  // Binary shard, little-endian: "EPIS", u32 version, u64 N_images, u32 H,
  // u32 W, u32 C, f32 pixels [N, H, W, C], u64 N_episodes, then per episode:
  // u64 episode_id, u32 class, f32 hue, u32 member count, member count x u64
  // image_id, member count x 5 f32 nuisance (pos_x, pos_y, scale, rotation,
  // noise_level).
  std::string serialize() const;
  static Corpus deserialize(const std::string& bytes, const std::string& source);
  void write(const std::filesystem::path& path) const;
  static Corpus read(const std::filesystem::path& path);

 private:
  void build_index();

  ImageShape image_;
  std::vector<float> pixels_;
  std::vector<EpisodeRecord> episodes_;
  std::vector<std::size_t> episode_of_;
  std::vector<std::size_t> member_of_;
};

struct CorpusConfig {
  std::uint64_t num_episodes = 0;
  std::uint32_t members_per_episode = 4;
  ImageShape image;
  std::uint64_t seed = 0;

  void validate() const;
};

// Renders one image of the given factors into `out` ([H, W, C], values in
// [-1, 1]). Pixel noise is drawn from `noise_rng`.
void render_image(const ImageFactors& factors, const ImageShape& shape, Rng& noise_rng,
                  std::span<float> out);

// Episodes are generated from per-episode derived seeds, so the corpus is a
// pure function of the config.
Corpus generate_corpus(const CorpusConfig& cfg);

enum class PairMode { kPair, kReconstruction, kLabelGrouped };

std::string to_string(PairMode mode);
PairMode pair_mode_from_string(const std::string& name);

struct PairRecord {
  std::uint64_t cond_image_id = 0;
  std::uint64_t target_image_id = 0;
  float similarity = 0.0f;
  std::uint64_t episode_id = 0;  // episode of the conditioning image

  bool operator==(const PairRecord&) const = default;
};

// Draws a (conditioning, target) pair from episode `episode_index`:
// kPair: two distinct members, uniformly over ordered arrangements;
// kReconstruction: one member used as both;
// kLabelGrouped: conditioning member from this episode, target from any
// episode with the same class.
PairRecord sample_pair(const Corpus& corpus, std::size_t episode_index, PairMode mode, Rng& rng);

// All ordered pairs of distinct members within each episode.
std::vector<PairRecord> enumerate_episode_pairs(const Corpus& corpus);

struct FilterConfig {
  double low_threshold = 0.5;
  double high_threshold = 0.999;
  encoders::EncoderSpec encoder;

  void validate() const;
  bool keep(double similarity) const {
    return similarity >= low_threshold && similarity <= high_threshold;
  }
};

// Keeps pairs whose conditioning/target CLS cosine similarity lies in
// [low, high]; kept records carry the similarity.
std::vector<PairRecord> filter_pairs(std::span<const PairRecord> pairs, const FilterConfig& cfg,
                                     const encoders::EmbeddingTable& embeddings);

// Pair list file: "PAIR", u64 count, then count x (u64 cond_id,
// u64 target_id, f32 similarity, u64 episode_id).
void write_pairs(const std::filesystem::path& path, std::span<const PairRecord> pairs);
std::vector<PairRecord> read_pairs(const std::filesystem::path& path);

struct Batch {
  Tensor targets;                  // [B, H, W, C]
  encoders::ContextBatch context;  // of the conditioning images
  std::vector<PairRecord> pairs;
};

struct IteratorState {
  std::uint64_t epoch = 0;
  std::uint64_t position = 0;
};

// Endless stream of training batches. Every epoch visits each image once as
// a target in an order shuffled by (seed, epoch); the conditioning image is
// chosen per the pair mode from a stream keyed by (seed, epoch, position).
// Targets with no admissible conditioning image under the filter are skipped.
class BatchIterator {
 public:
  BatchIterator(const Corpus& corpus, const encoders::EmbeddingTable& context, PairMode mode,
                std::int64_t batch_size, std::uint64_t seed,
                std::optional<FilterConfig> filter = std::nullopt,
                const encoders::EmbeddingTable* filter_embeddings = nullptr);

  Batch next();

  IteratorState state() const { return state_; }
  void restore(IteratorState state) { state_ = state; }

 private:
  std::optional<PairRecord> pair_for(std::uint64_t target, Rng& rng) const;
  std::vector<std::uint64_t> epoch_order(std::uint64_t epoch) const;

  const Corpus& corpus_;
  const encoders::EmbeddingTable& context_;
  PairMode mode_;
  std::int64_t batch_size_;
  std::uint64_t seed_;
  // Admissible conditioning images per target id (pair / label-grouped).
  std::vector<std::vector<std::uint64_t>> candidates_;
  std::vector<std::vector<float>> candidate_similarity_;
  IteratorState state_;
  std::vector<std::uint64_t> order_;
  std::uint64_t order_epoch_ = ~0ULL;
};

}  // namespace semvar::data

#endif  // SEMVAR_EPISODIC_HPP_
