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

#include "semvar/episodic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "semvar/binary_io.hpp"
#include "semvar/errors.hpp"

namespace semvar::data {

namespace {

constexpr std::uint32_t kShardVersion = 1;
constexpr float kBackground = -0.8f;
constexpr int kSupersample = 4;

// Membership test in shape-local coordinates (radius ~1).
bool inside_shape(std::uint32_t cls, double u, double v) {
  const double r2 = u * u + v * v;
  switch (cls) {
    case 0:  // disk
      return r2 <= 1.0;
    case 1:  // square
      return std::max(std::abs(u), std::abs(v)) <= 0.8;
    case 2:  // triangle
      return v >= -0.5 && v <= 1.0 - std::sqrt(3.0) * std::abs(u);
    case 3:  // plus
      return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
    case 4:  // ring
      return r2 <= 1.0 && r2 >= 0.55 * 0.55;
    case 5:  // diamond
      return std::abs(u) + std::abs(v) <= 1.0;
    case 6:  // bar
      return u * u + (v / 0.45) * (v / 0.45) <= 1.0;
    case 7: {  // five-lobed star
      const double theta = std::atan2(v, u);
      return std::sqrt(r2) <= 0.55 + 0.45 * std::cos(5.0 * theta);
    }
    default:
      throw UsageError("unknown shape class " + std::to_string(cls));
  }
}

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  const double table[6][3] = {{v, t, p}, {q, v, p}, {p, v, t}, {p, q, v}, {t, p, v}, {v, p, q}};
  for (int i = 0; i < 3; ++i) rgb[i] = table[sector][i];
}

}  // namespace

// ---- Corpus ----

Corpus::Corpus(ImageShape image, std::vector<float> pixels, std::vector<EpisodeRecord> episodes)
    : image_(image), pixels_(std::move(pixels)), episodes_(std::move(episodes)) {
  build_index();
}

std::uint64_t Corpus::num_images() const {
  return image_.size() == 0 ? 0 : pixels_.size() / static_cast<std::size_t>(image_.size());
}

void Corpus::build_index() {
  if (image_.size() <= 0) throw DataError("corpus image shape must be positive");
  if (pixels_.size() % static_cast<std::size_t>(image_.size()) != 0) {
    throw DataError("corpus pixel count is not a multiple of the image size");
  }
  const auto n = num_images();
  episode_of_.assign(n, static_cast<std::size_t>(-1));
  member_of_.assign(n, 0);
  for (std::size_t e = 0; e < episodes_.size(); ++e) {
    const auto& ep = episodes_[e];
    if (ep.members.size() != ep.factors.size()) throw DataError("episode member/factor count mismatch");
    for (std::size_t m = 0; m < ep.members.size(); ++m) {
      const auto id = ep.members[m];
      if (id >= n) throw DataError("episode references missing image " + std::to_string(id));
      if (episode_of_[id] != static_cast<std::size_t>(-1)) {
        throw DataError("image " + std::to_string(id) + " belongs to two episodes");
      }
      episode_of_[id] = e;
      member_of_[id] = m;
    }
  }
  for (std::uint64_t id = 0; id < n; ++id) {
    if (episode_of_[id] == static_cast<std::size_t>(-1)) {
      throw DataError("image " + std::to_string(id) + " belongs to no episode");
    }
  }
}

std::span<const float> Corpus::image(std::uint64_t id) const {
  if (id >= num_images()) throw DataError("no image with id " + std::to_string(id));
  const auto sz = static_cast<std::size_t>(image_.size());
  return std::span<const float>(pixels_).subspan(id * sz, sz);
}

const ImageFactors& Corpus::factors(std::uint64_t id) const {
  const auto e = episode_index(id);
  return episodes_[e].factors[member_of_[id]];
}

std::size_t Corpus::episode_index(std::uint64_t id) const {
  if (id >= num_images()) throw DataError("no image with id " + std::to_string(id));
  return episode_of_[id];
}

Tensor Corpus::gather(std::span<const std::uint64_t> ids) const {
  std::vector<float> out;
  out.reserve(ids.size() * static_cast<std::size_t>(image_.size()));
  for (auto id : ids) {
    const auto img = image(id);
    out.insert(out.end(), img.begin(), img.end());
  }
  return Tensor({static_cast<std::int64_t>(ids.size()), image_.height, image_.width, image_.channels},
                std::move(out));
}

std::string Corpus::serialize() const {
  std::ostringstream buf;
  BinaryWriter w(buf);
  w.magic("EPIS");
  w.u32(kShardVersion);
  w.u64(num_images());
  w.u32(static_cast<std::uint32_t>(image_.height));
  w.u32(static_cast<std::uint32_t>(image_.width));
  w.u32(static_cast<std::uint32_t>(image_.channels));
  w.f32s(pixels_);
  w.u64(episodes_.size());
  for (const auto& ep : episodes_) {
    w.u64(ep.episode_id);
    w.u32(ep.class_id);
    w.f32(ep.hue);
    w.u32(static_cast<std::uint32_t>(ep.members.size()));
    for (auto id : ep.members) w.u64(id);
    for (const auto& f : ep.factors) {
      w.f32(f.pos_x);
      w.f32(f.pos_y);
      w.f32(f.scale);
      w.f32(f.rotation);
      w.f32(f.noise_level);
    }
  }
  return buf.str();
}

Corpus Corpus::deserialize(const std::string& bytes, const std::string& source) {
  std::istringstream in(bytes);
  BinaryReader r(in, source);
  r.expect_magic("EPIS");
  if (r.u32() != kShardVersion) throw DataError(source + ": unsupported shard version");
  const auto n = r.u64();
  ImageShape shape;
  shape.height = static_cast<int>(r.u32());
  shape.width = static_cast<int>(r.u32());
  shape.channels = static_cast<int>(r.u32());
  if (shape.size() <= 0) throw DataError(source + ": invalid image shape");
  std::vector<float> pixels(static_cast<std::size_t>(n * shape.size()));
  r.f32s(pixels);
  const auto num_episodes = r.u64();
  std::vector<EpisodeRecord> episodes(num_episodes);
  for (auto& ep : episodes) {
    ep.episode_id = r.u64();
    ep.class_id = r.u32();
    ep.hue = r.f32();
    const auto count = r.u32();
    ep.members.resize(count);
    for (auto& id : ep.members) id = r.u64();
    ep.factors.resize(count);
    for (auto& f : ep.factors) {
      f.class_id = ep.class_id;
      f.hue = ep.hue;
      f.pos_x = r.f32();
      f.pos_y = r.f32();
      f.scale = r.f32();
      f.rotation = r.f32();
      f.noise_level = r.f32();
    }
  }
  if (!r.at_end()) throw DataError(source + ": trailing bytes after shard");
  return Corpus(shape, std::move(pixels), std::move(episodes));
}

void Corpus::write(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

Corpus Corpus::read(const std::filesystem::path& path) {
  return deserialize(read_file(path), path.string());
}

// ---- generation ----

void CorpusConfig::validate() const {
  if (members_per_episode < 1) throw UsageError("episodes need at least one member");
  if (image.height < 1 || image.width < 1 || image.channels < 1) {
    throw UsageError("image extents must be positive");
  }
}

void render_image(const ImageFactors& f, const ImageShape& shape, Rng& noise_rng, std::span<float> out) {
  if (static_cast<std::int64_t>(out.size()) != shape.size()) throw UsageError("render_image: bad buffer");
  double rgb[3];
  hsv_to_rgb(f.hue, 0.85, 0.95, rgb);
  const double extent = std::min(shape.height, shape.width);
  const double radius = f.scale * extent;
  const double cx = f.pos_x * shape.width, cy = f.pos_y * shape.height;
  const double cr = std::cos(f.rotation), sr = std::sin(f.rotation);
  for (int y = 0; y < shape.height; ++y) {
    for (int x = 0; x < shape.width; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSupersample; ++sy) {
        for (int sx = 0; sx < kSupersample; ++sx) {
          const double px = x + (sx + 0.5) / kSupersample - cx;
          const double py = y + (sy + 0.5) / kSupersample - cy;
          // Rotate into the shape frame; v points up.
          const double u = (cr * px + sr * py) / radius;
          const double v = -(-sr * px + cr * py) / radius;
          hits += inside_shape(f.class_id, u, v) ? 1 : 0;
        }
      }
      const double coverage = static_cast<double>(hits) / (kSupersample * kSupersample);
      for (int c = 0; c < shape.channels; ++c) {
        const double colour = 2.0 * rgb[c % 3] - 1.0;
        double value = kBackground + coverage * (colour - kBackground);
        value += f.noise_level * noise_rng.normal();
        out[(static_cast<std::size_t>(y) * shape.width + x) * shape.channels + c] =
            static_cast<float>(std::clamp(value, -1.0, 1.0));
      }
    }
  }
}

Corpus generate_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  const auto members = cfg.members_per_episode;
  const auto img_size = static_cast<std::size_t>(cfg.image.size());
  std::vector<float> pixels(cfg.num_episodes * members * img_size);
  std::vector<EpisodeRecord> episodes(cfg.num_episodes);
  for (std::uint64_t e = 0; e < cfg.num_episodes; ++e) {
    Rng rng(derive_seed(cfg.seed, e, 0x6570697364ULL));
    auto& ep = episodes[e];
    ep.episode_id = e;
    ep.class_id = static_cast<std::uint32_t>(rng.index(kNumShapeClasses));
    ep.hue = static_cast<float>(rng.uniform());
    for (std::uint32_t m = 0; m < members; ++m) {
      const std::uint64_t id = e * members + m;
      ImageFactors f;
      f.class_id = ep.class_id;
      f.hue = ep.hue;
      f.pos_x = static_cast<float>(rng.uniform(0.3, 0.7));
      f.pos_y = static_cast<float>(rng.uniform(0.3, 0.7));
      f.scale = static_cast<float>(rng.uniform(0.22, 0.38));
      f.rotation = static_cast<float>(rng.uniform(0.0, 2.0 * std::numbers::pi));
      f.noise_level = static_cast<float>(rng.uniform(0.0, 0.05));
      render_image(f, cfg.image, rng, std::span<float>(pixels).subspan(id * img_size, img_size));
      ep.members.push_back(id);
      ep.factors.push_back(f);
    }
  }
  return Corpus(cfg.image, std::move(pixels), std::move(episodes));
}

// ---- pairs ----

std::string to_string(PairMode mode) {
  switch (mode) {
    case PairMode::kPair: return "pair";
    case PairMode::kReconstruction: return "recon";
    case PairMode::kLabelGrouped: return "label-grouped";
  }
  return "unknown";
}

PairMode pair_mode_from_string(const std::string& name) {
  if (name == "pair") return PairMode::kPair;
  if (name == "recon" || name == "reconstruction") return PairMode::kReconstruction;
  if (name == "label-grouped") return PairMode::kLabelGrouped;
  throw UsageError("unknown pair mode '" + name + "' (expected recon, pair or label-grouped)");
}

PairRecord sample_pair(const Corpus& corpus, std::size_t episode_index, PairMode mode, Rng& rng) {
  const auto& episodes = corpus.episodes();
  if (episode_index >= episodes.size()) throw UsageError("sample_pair: episode index out of range");
  const auto& ep = episodes[episode_index];
  if (ep.members.empty()) throw DataError("sample_pair: empty episode");
  PairRecord rec;
  rec.episode_id = ep.episode_id;
  switch (mode) {
    case PairMode::kReconstruction: {
      const auto id = ep.members[rng.index(ep.members.size())];
      rec.cond_image_id = rec.target_image_id = id;
      rec.similarity = 1.0f;
      break;
    }
    case PairMode::kPair: {
      if (ep.members.size() < 2) throw DataError("pair mode needs episodes with >= 2 members");
      const auto i = rng.index(ep.members.size());
      auto j = rng.index(ep.members.size() - 1);
      if (j >= i) ++j;
      rec.cond_image_id = ep.members[i];
      rec.target_image_id = ep.members[j];
      break;
    }
    case PairMode::kLabelGrouped: {
      rec.cond_image_id = ep.members[rng.index(ep.members.size())];
      std::vector<std::size_t> same_class;
      for (std::size_t e = 0; e < episodes.size(); ++e) {
        if (episodes[e].class_id == ep.class_id && !episodes[e].members.empty()) same_class.push_back(e);
      }
      const auto& other = episodes[same_class[rng.index(same_class.size())]];
      rec.target_image_id = other.members[rng.index(other.members.size())];
      break;
    }
  }
  return rec;
}

std::vector<PairRecord> enumerate_episode_pairs(const Corpus& corpus) {
  std::vector<PairRecord> out;
  for (const auto& ep : corpus.episodes()) {
    for (auto c : ep.members) {
      for (auto t : ep.members) {
        if (c != t) out.push_back({c, t, 0.0f, ep.episode_id});
      }
    }
  }
  return out;
}

void FilterConfig::validate() const {
  if (!(low_threshold < high_threshold)) throw UsageError("filter needs low < high threshold");
}

std::vector<PairRecord> filter_pairs(std::span<const PairRecord> pairs, const FilterConfig& cfg,
                                     const encoders::EmbeddingTable& embeddings) {
  cfg.validate();
  std::vector<PairRecord> kept;
  for (const auto& p : pairs) {
    const double s = encoders::cosine_similarity(embeddings.at(p.cond_image_id).cls,
                                                 embeddings.at(p.target_image_id).cls);
    if (cfg.keep(s)) {
      PairRecord k = p;
      k.similarity = static_cast<float>(s);
      kept.push_back(k);
    }
  }
  return kept;
}

void write_pairs(const std::filesystem::path& path, std::span<const PairRecord> pairs) {
  std::ostringstream buf;
  BinaryWriter w(buf);
  w.magic("PAIR");
  w.u64(pairs.size());
  for (const auto& p : pairs) {
    w.u64(p.cond_image_id);
    w.u64(p.target_image_id);
    w.f32(p.similarity);
    w.u64(p.episode_id);
  }
  write_file_atomic(path, buf.str());
}

std::vector<PairRecord> read_pairs(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  BinaryReader r(in, path.string());
  r.expect_magic("PAIR");
  std::vector<PairRecord> out(r.u64());
  for (auto& p : out) {
    p.cond_image_id = r.u64();
    p.target_image_id = r.u64();
    p.similarity = r.f32();
    p.episode_id = r.u64();
  }
  if (!r.at_end()) throw DataError(path.string() + ": trailing bytes after pair records");
  return out;
}

// ---- BatchIterator ----

BatchIterator::BatchIterator(const Corpus& corpus, const encoders::EmbeddingTable& context,
                             PairMode mode, std::int64_t batch_size, std::uint64_t seed,
                             std::optional<FilterConfig> filter,
                             const encoders::EmbeddingTable* filter_embeddings)
    : corpus_(corpus), context_(context), mode_(mode), batch_size_(batch_size), seed_(seed) {
  if (batch_size < 1) throw UsageError("batch size must be positive");
  if (corpus.num_images() == 0) throw DataError("cannot iterate over an empty shard");
  if (filter) {
    filter->validate();
    if (filter_embeddings == nullptr) throw UsageError("filtering needs filter embeddings");
  }
  const auto n = corpus.num_images();
  for (std::uint64_t id = 0; id < n; ++id) {
    if (!context.contains(id)) throw DataError("no context embedding for image " + std::to_string(id));
  }
  if (mode == PairMode::kReconstruction) return;

  candidates_.resize(n);
  candidate_similarity_.resize(n);
  const auto& episodes = corpus.episodes();
  std::vector<std::vector<std::size_t>> by_class(kNumShapeClasses);
  for (std::size_t e = 0; e < episodes.size(); ++e) by_class.at(episodes[e].class_id).push_back(e);
  const auto& sim_table = filter ? *filter_embeddings : context;
  for (std::uint64_t target = 0; target < n; ++target) {
    const auto& ep = episodes[corpus.episode_index(target)];
    std::vector<std::uint64_t> pool;
    if (mode == PairMode::kPair) {
      pool = ep.members;
    } else {
      for (auto e : by_class[ep.class_id]) {
        pool.insert(pool.end(), episodes[e].members.begin(), episodes[e].members.end());
      }
    }
    for (auto cond : pool) {
      if (cond == target) continue;
      const double s = encoders::cosine_similarity(sim_table.at(cond).cls, sim_table.at(target).cls);
      if (filter && !filter->keep(s)) continue;
      candidates_[target].push_back(cond);
      candidate_similarity_[target].push_back(static_cast<float>(s));
    }
  }
  const bool any = std::any_of(candidates_.begin(), candidates_.end(),
                               [](const auto& c) { return !c.empty(); });
  if (!any) throw DataError("no admissible training pairs (check episode sizes and filter thresholds)");
}

std::vector<std::uint64_t> BatchIterator::epoch_order(std::uint64_t epoch) const {
  std::vector<std::uint64_t> order(corpus_.num_images());
  for (std::uint64_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed_, epoch, 0x6f72646572ULL));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  return order;
}

std::optional<PairRecord> BatchIterator::pair_for(std::uint64_t target, Rng& rng) const {
  PairRecord rec;
  rec.target_image_id = target;
  if (mode_ == PairMode::kReconstruction) {
    rec.cond_image_id = target;
    rec.similarity = 1.0f;
  } else {
    const auto& cands = candidates_[target];
    if (cands.empty()) return std::nullopt;
    const auto k = rng.index(cands.size());
    rec.cond_image_id = cands[k];
    rec.similarity = candidate_similarity_[target][k];
  }
  rec.episode_id = corpus_.episodes()[corpus_.episode_index(rec.cond_image_id)].episode_id;
  return rec;
}

Batch BatchIterator::next() {
  Batch batch;
  std::vector<std::uint64_t> targets;
  std::vector<const encoders::ContextTokens*> contexts;
  std::uint64_t skipped_in_row = 0;
  while (static_cast<std::int64_t>(batch.pairs.size()) < batch_size_) {
    if (order_epoch_ != state_.epoch) {
      order_ = epoch_order(state_.epoch);
      order_epoch_ = state_.epoch;
    }
    const auto target = order_[state_.position];
    Rng rng(derive_seed(seed_, state_.epoch, state_.position + 1));
    if (++state_.position == order_.size()) {
      state_.position = 0;
      ++state_.epoch;
    }
    auto rec = pair_for(target, rng);
    if (!rec) {
      if (++skipped_in_row > corpus_.num_images()) throw DataError("batch iterator exhausted");
      continue;
    }
    skipped_in_row = 0;
    batch.pairs.push_back(*rec);
    targets.push_back(rec->target_image_id);
    contexts.push_back(&context_.at(rec->cond_image_id));
  }
  batch.targets = corpus_.gather(targets);
  batch.context = encoders::stack_contexts(contexts);
  return batch;
}

}  // namespace semvar::data
