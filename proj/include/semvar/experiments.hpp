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

#ifndef SEMVAR_EXPERIMENTS_HPP_
#define SEMVAR_EXPERIMENTS_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semvar/checkpoint.hpp"
#include "semvar/config.hpp"
#include "semvar/denoiser.hpp"
#include "semvar/diffusion.hpp"
#include "semvar/encoders.hpp"
#include "semvar/episodic.hpp"
#include "semvar/metrics.hpp"
#include "semvar/trainer.hpp"

namespace semvar::exp {

// Short identifier of the build that produced an output.
std::string build_id();

// Reproducibility record written into every output directory before any
// other output.
struct Manifest {
  std::string experiment;
  std::uint64_t seed = 0;
  Config config;
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;

  std::string to_text() const;
  void write(const std::filesystem::path& dir) const;  // <dir>/manifest.txt
};

// Few-shot evaluation settings ("eval." keys).
struct EvalSettings {
  metrics::FewShotConfig fewshot;
  diffusion::SamplerConfig sampler;
  encoders::EncoderSpec extractor;
  bool use_ema = true;

  EvalSettings();
  Config to_config() const;
  static EvalSettings from_config(const Config& cfg);
};

// Everything an experiment needs, resolved from one key=value file:
//   data.*      training corpus (episodes, members, seed)
//   test.*      held-out corpus (episodes, members, seed)
//   encoder.*   context encoder      model.* train.* schedule.*
//   filter.*    optional pair filter (enabled, low, high, encoder.*)
//   eval.*      few-shot protocol, sampler and feature extractor
// Image extents everywhere follow model.image_*.
struct PipelineConfig {
  data::CorpusConfig train_data;
  data::CorpusConfig test_data;
  encoders::EncoderSpec encoder;
  model::DenoiserConfig model;
  train::TrainConfig train;
  diffusion::ScheduleConfig schedule;
  std::optional<data::FilterConfig> filter;
  EvalSettings eval;

  void validate() const;
  Config to_config() const;
  static PipelineConfig from_config(const Config& cfg);
};

// Held-out images with their conditioning contexts.
struct TestSet {
  data::Corpus corpus;
  encoders::EmbeddingTable contexts;
  metrics::ItemSet items;
};
TestSet make_test_set(data::Corpus corpus, const encoders::EncoderSpec& encoder);

// Draws samples conditioned on test image `cond_index` with the denoiser;
// `sampler.guidance` selects the guidance weight. Samples are clamped to
// [-1, 1].
metrics::SamplerFn model_sampler(const model::Denoiser& model, const TestSet& test,
                                 const diffusion::SamplerConfig& sampler,
                                 const diffusion::ScheduleConfig& schedule);

// cls features of images under `extractor`.
metrics::ExtractorFn image_extractor(const encoders::Encoder& extractor);

// Trains one model in `out_dir` (manifest, loss.csv, timing.csv,
// checkpoint.semc). The data order depends only on train.seed. With
// `resume` set, an existing <out_dir>/checkpoint.semc is continued.
train::TrainResult train_model(const PipelineConfig& cfg, data::PairMode mode, const data::Corpus& corpus,
                               const encoders::EmbeddingTable& contexts, const std::filesystem::path& out_dir,
                               bool resume = false, const Manifest* manifest = nullptr);

// Few-shot evaluation of a checkpoint at guidance `g`.
metrics::FewShotResult evaluate_checkpoint(const Checkpoint& ck, const TestSet& test, const EvalSettings& eval,
                                           double g);

// Sample grid of the first `max_rows` conditions of a few-shot run.
void write_fewshot_mosaic(const std::filesystem::path& path, const metrics::FewShotResult& run,
                          const TestSet& test, std::int64_t max_rows = 8);

struct ModelRow {
  std::string name;
  std::string objective;
  std::string conditioning;
  metrics::MetricReport report;
};

// model,objective,conditioning_mode,fid,precision,recall,diversity
std::string comparison_csv(std::span<const ModelRow> rows);

struct CollapseResult {
  ModelRow recon;
  ModelRow pair;
  bool diversity_lower = false;  // recon diversity < pair diversity
  bool recall_lower = false;     // recon recall < pair recall
};

// Reconstruction-trained against pair-trained model under identical budgets.
CollapseResult run_collapse(const Config& cfg, const std::filesystem::path& out_dir);

// FiLM against cross-attention conditioning; reported, not asserted.
std::vector<ModelRow> run_conditioning(const Config& cfg, const std::filesystem::path& out_dir);

// Guidance sweep of a trained checkpoint. The test set and evaluation
// settings come from the checkpoint's recorded pipeline config unless
// `overrides` replaces them.
std::vector<metrics::SweepRow> run_guidance(const std::filesystem::path& checkpoint,
                                            std::span<const double> g_values,
                                            const std::filesystem::path& out_dir, const Config& overrides = {});

// Parses "0,0.5,1.0".
std::vector<double> parse_double_list(const std::string& text);

}  // namespace semvar::exp

#endif  // SEMVAR_EXPERIMENTS_HPP_
