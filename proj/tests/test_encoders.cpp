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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "semvar/encoders.hpp"
#include "semvar/episodic.hpp"
#include "semvar/errors.hpp"

namespace semvar::encoders {
namespace {

namespace fs = std::filesystem;

data::Corpus small_corpus(std::uint64_t episodes, std::uint64_t seed = 1) {
  data::CorpusConfig cfg;
  cfg.num_episodes = episodes;
  cfg.members_per_episode = 4;
  cfg.seed = seed;
  return data::generate_corpus(cfg);
}

EncoderSpec spec_of(EncoderKind kind, std::uint64_t seed = 3) {
  EncoderSpec s;
  s.kind = kind;
  s.seed = seed;
  return s;
}

EncoderInput input_of(const data::Corpus& c, std::uint64_t id) {
  return {c.image(id), &c.factors(id), id};
}

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "semvar_test_encoders";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST(CosineTest, Examples) {
  const std::vector<float> v{0.3f, -1.2f, 2.0f}, neg{-0.3f, 1.2f, -2.0f};
  EXPECT_NEAR(cosine_similarity(v, v), 1.0, 1e-12);
  EXPECT_NEAR(cosine_similarity(v, neg), -1.0, 1e-12);
  const std::vector<float> a{1, 0}, b{1, 1};
  EXPECT_NEAR(cosine_similarity(a, b), std::sqrt(2.0) / 2.0, 1e-12);
  const std::vector<float> zero{0, 0};
  EXPECT_THROW(cosine_similarity(a, zero), UsageError);
  EXPECT_THROW(cosine_similarity(a, v), UsageError);
}

TEST(EncoderTest, SpecShapes) {
  auto s = spec_of(EncoderKind::kFrozenRandomVit);
  EXPECT_EQ(s.num_tokens(), 16);
  EXPECT_EQ(s.dim(), 32);
  EXPECT_EQ(EncoderSpec::from_config(s.to_config()).id(), s.id());
  s.patch_size = 5;
  EXPECT_THROW(s.validate(), UsageError);
  EXPECT_EQ(encoder_kind_from_string(to_string(EncoderKind::kImported)), EncoderKind::kImported);
  EXPECT_THROW(encoder_kind_from_string("clip"), UsageError);
}

TEST(EncoderTest, IdenticalImagesGiveIdenticalTokens) {
  const auto corpus = small_corpus(3);
  for (auto kind : {EncoderKind::kOracleFactor, EncoderKind::kFrozenRandomVit}) {
    const Encoder a(spec_of(kind)), b(spec_of(kind));
    const auto ta = a.encode(input_of(corpus, 5));
    const auto tb = b.encode(input_of(corpus, 5));
    EXPECT_EQ(ta, tb);
    EXPECT_NEAR(cosine_similarity(ta.cls, tb.cls), 1.0, 1e-6);
    EXPECT_EQ(ta.num_tokens, 16);
    EXPECT_EQ(static_cast<std::int64_t>(ta.tokens.size()), 16 * 32);
    EXPECT_NO_THROW(ta.validate());
  }
}

TEST(EncoderTest, BatchMatchesSingle) {
  const auto corpus = small_corpus(2);
  const Encoder enc(spec_of(EncoderKind::kFrozenRandomVit));
  std::vector<EncoderInput> inputs;
  for (std::uint64_t i = 0; i < corpus.num_images(); ++i) inputs.push_back(input_of(corpus, i));
  const auto batch = enc.encode_batch(inputs);
  ASSERT_EQ(batch.size(), inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) EXPECT_EQ(batch[i], enc.encode(inputs[i]));
}

TEST(EncoderTest, SeedChangesFrozenRandomVit) {
  const auto corpus = small_corpus(1);
  const auto a = Encoder(spec_of(EncoderKind::kFrozenRandomVit, 1)).encode(input_of(corpus, 0));
  const auto b = Encoder(spec_of(EncoderKind::kFrozenRandomVit, 2)).encode(input_of(corpus, 0));
  EXPECT_NE(a.tokens, b.tokens);
}

TEST(EncoderTest, OracleEpisodeMembersShareCls) {
  const auto corpus = small_corpus(6);
  const Encoder enc(spec_of(EncoderKind::kOracleFactor));
  for (const auto& ep : corpus.episodes()) {
    const auto first = enc.encode(input_of(corpus, ep.members[0]));
    for (auto id : ep.members) {
      EXPECT_NEAR(cosine_similarity(first.cls, enc.encode(input_of(corpus, id)).cls), 1.0, 1e-6);
    }
  }
}

TEST(EncoderTest, OracleRequiresFactors) {
  const auto corpus = small_corpus(1);
  const Encoder enc(spec_of(EncoderKind::kOracleFactor));
  EXPECT_THROW(enc.encode({corpus.image(0), nullptr, 0}), DataError);
  EXPECT_THROW(enc.encode({corpus.image(0).subspan(1), &corpus.factors(0), 0}), UsageError);
}

double separation_margin(const EncoderSpec& spec, const data::Corpus& corpus) {
  const auto table = embed_corpus(spec, corpus);
  double intra = 0, inter = 0;
  std::int64_t n_intra = 0, n_inter = 0;
  for (std::uint64_t i = 0; i < corpus.num_images(); ++i) {
    for (std::uint64_t j = i + 1; j < corpus.num_images(); ++j) {
      const double s = cosine_similarity(table.at(i).cls, table.at(j).cls);
      if (corpus.episode_index(i) == corpus.episode_index(j)) {
        intra += s;
        ++n_intra;
      } else {
        inter += s;
        ++n_inter;
      }
    }
  }
  return intra / n_intra - inter / n_inter;
}

TEST(EncoderTest, OracleSeparatesEpisodes) {
  EXPECT_GT(separation_margin(spec_of(EncoderKind::kOracleFactor), small_corpus(40)), 0.1);
}

TEST(EncoderTest, FrozenRandomVitPrefersEpisodeMembers) {
  EXPECT_GT(separation_margin(spec_of(EncoderKind::kFrozenRandomVit), small_corpus(30)), 0.0);
}

TEST(EmbeddingTableTest, RoundTripIsExact) {
  const auto corpus = small_corpus(3);
  const auto spec = spec_of(EncoderKind::kFrozenRandomVit);
  const auto table = embed_corpus(spec, corpus);
  const auto path = temp_path("roundtrip.embd");
  table.write(path);
  const auto back = EmbeddingTable::read(path);
  ASSERT_EQ(back.size(), table.size());
  EXPECT_EQ(back.num_tokens(), table.num_tokens());
  const Encoder enc(spec);
  for (const auto& [id, rec] : back.records()) {
    EXPECT_EQ(rec.tokens, enc.encode(input_of(corpus, id)).tokens);
    EXPECT_EQ(rec.cls, table.at(id).cls);
  }
  EXPECT_THROW(back.at(999), DataError);
}

TEST(EmbeddingTableTest, HeaderLayout) {
  EmbeddingTable table(2, 3);
  ContextTokens t{2, 3, {1, 2, 3, 4, 5, 6}, {7, 8, 9}, "x"};
  table.insert(42, t);
  const auto bytes = table.serialize();
  EXPECT_EQ(bytes.substr(0, 4), "EMBD");
  // magic, version, N, T_c, D_c, then one record of id + 6 + 3 floats.
  EXPECT_EQ(bytes.size(), 4u + 4 + 8 + 4 + 4 + 8 + 4 * 9);
  EXPECT_THROW(EmbeddingTable::deserialize(bytes.substr(0, bytes.size() - 1), "cut"), DataError);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(EmbeddingTable::deserialize(bad, "bad"), DataError);
  ContextTokens wrong{1, 3, {1, 2, 3}, {1, 2, 3}, "y"};
  EXPECT_THROW(table.insert(1, wrong), DataError);
}

TEST(EmbeddingTableTest, PrecomputeFromShard) {
  const auto corpus = small_corpus(3);
  const auto shard = temp_path("c.epis");
  corpus.write(shard);
  const auto spec = spec_of(EncoderKind::kFrozenRandomVit);
  const auto a = temp_path("a.embd"), b = temp_path("b.embd");
  EXPECT_EQ(precompute_embeddings(spec, shard, a), 12u);
  EXPECT_EQ(precompute_embeddings(spec, shard, b), 12u);
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_EQ(slurp(a), embed_corpus(spec, corpus).serialize());

  const data::Corpus empty(corpus.image_shape(), {}, {});
  const auto empty_shard = temp_path("empty.epis");
  empty.write(empty_shard);
  const auto e = temp_path("empty.embd");
  EXPECT_EQ(precompute_embeddings(spec, empty_shard, e), 0u);
  EXPECT_EQ(EmbeddingTable::read(e).size(), 0u);
  EXPECT_THROW(precompute_embeddings(spec, temp_path("missing.epis"), e), Error);
}

TEST(EmbeddingTableTest, ImportedEncoderReadsFile) {
  const auto corpus = small_corpus(2);
  const auto vit = spec_of(EncoderKind::kFrozenRandomVit);
  const auto path = temp_path("import.embd");
  embed_corpus(vit, corpus).write(path);
  auto spec = spec_of(EncoderKind::kImported);
  spec.imported_path = path;
  const Encoder imported(spec);
  EXPECT_EQ(imported.encode(input_of(corpus, 3)).tokens, Encoder(vit).encode(input_of(corpus, 3)).tokens);
  EXPECT_THROW(imported.encode({corpus.image(0), nullptr, 999}), DataError);
}

TEST(ContextBatchTest, StackAndRepeat) {
  ContextTokens a{2, 2, {1, 2, 3, 4}, {5, 6}, "a"}, b{2, 2, {7, 8, 9, 10}, {11, 12}, "b"};
  const ContextTokens* items[] = {&a, &b};
  const auto batch = stack_contexts(items);
  EXPECT_EQ(batch.tokens.shape(), (Shape{2, 2, 2}));
  EXPECT_EQ(batch.cls[3], 12.0f);
  const auto rep = repeat_context(a, 3);
  EXPECT_EQ(rep.batch(), 3);
  EXPECT_EQ(rep.tokens[4], 1.0f);
}

}  // namespace
}  // namespace semvar::encoders
