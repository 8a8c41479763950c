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

#include "semvar/experiments.hpp"

#include <algorithm>
#include <sstream>

#include "semvar/binary_io.hpp"
#include "semvar/errors.hpp"
#include "semvar/image_io.hpp"

#ifndef SEMVAR_BUILD_ID
#define SEMVAR_BUILD_ID "unknown"
#endif

namespace semvar::exp {

namespace fs = std::filesystem;

std::string build_id() { return SEMVAR_BUILD_ID; }

std::string Manifest::to_text() const {
  std::ostringstream out;
  out << "experiment = " << experiment << '\n'
      << "seed = " << seed << '\n'
      << "build = " << build_id() << '\n';
  for (const auto& [k, v] : inputs) out << "input." << k << " = " << v << '\n';
  for (const auto& [k, v] : outputs) out << "output." << k << " = " << v << '\n';
  out << config.prefixed("config.").to_string();
  return out.str();
}

void Manifest::write(const fs::path& dir) const {
  fs::create_directories(dir);
  write_file_atomic(dir / "manifest.txt", to_text());
}

// ---- settings ----

EvalSettings::EvalSettings() {
  fewshot.n = 200;
  fewshot.k = 20;
  sampler.num_steps = 25;
  extractor.kind = encoders::EncoderKind::kFrozenRandomVit;
  extractor.seed = 7;
}

Config EvalSettings::to_config() const {
  Config c;
  c.merge(fewshot.to_config());
  c.set("steps", sampler.num_steps);
  c.set("eta", sampler.variance_interp);
  c.set("use_ema", use_ema);
  c.merge(extractor.to_config().prefixed("extractor."));
  return c;
}

EvalSettings EvalSettings::from_config(const Config& cfg) {
  EvalSettings e;
  e.fewshot.n = cfg.get_int("n", e.fewshot.n);
  e.fewshot.k = cfg.get_int("k", e.fewshot.k);
  e.fewshot.guidance = cfg.get_double("guidance", e.fewshot.guidance);
  e.fewshot.seed = cfg.get_u64("seed", e.fewshot.seed);
  e.fewshot.knn_k = static_cast<int>(cfg.get_int("knn_k", e.fewshot.knn_k));
  e.sampler.num_steps = static_cast<int>(cfg.get_int("steps", e.sampler.num_steps));
  e.sampler.variance_interp = cfg.get_double("eta", e.sampler.variance_interp);
  e.use_ema = cfg.get_bool("use_ema", e.use_ema);
  Config ex = e.extractor.to_config();
  ex.merge(cfg.subset("extractor."));
  e.extractor = encoders::EncoderSpec::from_config(ex);
  e.fewshot.validate();
  e.sampler.validate();
  return e;
}

namespace {

data::CorpusConfig corpus_from(const Config& c, const ImageShape& image, std::uint64_t default_episodes,
                               std::uint64_t default_seed) {
  data::CorpusConfig d;
  d.num_episodes = c.get_u64("episodes", default_episodes);
  d.members_per_episode = static_cast<std::uint32_t>(c.get_int("members", d.members_per_episode));
  d.seed = c.get_u64("seed", default_seed);
  d.image = image;
  d.validate();
  return d;
}

Config corpus_to(const data::CorpusConfig& d) {
  Config c;
  c.set("episodes", d.num_episodes);
  c.set("members", static_cast<std::int64_t>(d.members_per_episode));
  c.set("seed", d.seed);
  return c;
}

}  // namespace

void PipelineConfig::validate() const {
  model.validate();
  train.validate();
  schedule.validate();
  encoder.validate();
  if (encoder.num_tokens() != model.context_tokens || encoder.dim() != model.context_dim) {
    throw UsageError("encoder emits " + std::to_string(encoder.num_tokens()) + "x" +
                     std::to_string(encoder.dim()) + " tokens but the model expects " +
                     std::to_string(model.context_tokens) + "x" + std::to_string(model.context_dim));
  }
  if (!(encoder.image == model.image) || !(eval.extractor.image == model.image)) {
    throw UsageError("encoder and model image extents differ");
  }
  if (schedule.image_resolution != model.image.height) {
    throw UsageError("schedule.image_resolution must equal the model image height");
  }
  if (filter) filter->validate();
}

Config PipelineConfig::to_config() const {
  Config c;
  c.merge(corpus_to(train_data).prefixed("data."));
  c.merge(corpus_to(test_data).prefixed("test."));
  c.merge(encoder.to_config().prefixed("encoder."));
  c.merge(model.to_config().prefixed("model."));
  c.merge(train.to_config().prefixed("train."));
  c.merge(train::schedule_to_config(schedule).prefixed("schedule."));
  c.set("filter.enabled", filter.has_value());
  if (filter) {
    c.set("filter.low", filter->low_threshold);
    c.set("filter.high", filter->high_threshold);
    c.merge(filter->encoder.to_config().prefixed("filter.encoder."));
  }
  c.merge(eval.to_config().prefixed("eval."));
  return c;
}

PipelineConfig PipelineConfig::from_config(const Config& cfg) {
  PipelineConfig p;
  p.model = model::DenoiserConfig::from_config(cfg.subset("model."));
  const ImageShape image = p.model.image;
  auto with_image = [&](Config c) {
    c.set("image_height", image.height);
    c.set("image_width", image.width);
    c.set("image_channels", image.channels);
    return c;
  };
  p.train = train::TrainConfig::from_config(cfg.subset("train."));
  p.model.context_dropout = p.train.context_dropout;
  Config sched = cfg.subset("schedule.");
  if (!sched.has("image_resolution")) sched.set("image_resolution", image.height);
  p.schedule = train::schedule_from_config(sched);
  p.train_data = corpus_from(cfg.subset("data."), image, 500, 1);
  p.test_data = corpus_from(cfg.subset("test."), image, 50, 2);
  p.encoder = encoders::EncoderSpec::from_config(with_image(cfg.subset("encoder.")));
  if (cfg.get_bool("filter.enabled", false)) {
    data::FilterConfig f;
    f.low_threshold = cfg.get_double("filter.low", f.low_threshold);
    f.high_threshold = cfg.get_double("filter.high", f.high_threshold);
    Config fe = cfg.subset("filter.encoder.");
    if (!fe.has("kind")) fe.set("kind", "frozen-random-vit");
    f.encoder = encoders::EncoderSpec::from_config(with_image(fe));
    p.filter = f;
  }
  Config ev = cfg.subset("eval.");
  const Config image_keys = with_image({});
  for (const auto& [k, v] : image_keys.entries()) {
    if (!ev.has("extractor." + k)) ev.set("extractor." + k, v);
  }
  p.eval = EvalSettings::from_config(ev);
  p.validate();
  return p;
}

// ---- evaluation plumbing ----

TestSet make_test_set(data::Corpus corpus, const encoders::EncoderSpec& encoder) {
  TestSet t{std::move(corpus), {}, {}};
  t.contexts = encoders::embed_corpus(encoder, t.corpus);
  t.items.item_size = t.corpus.image_shape().size();
  t.items.data.assign(t.corpus.pixels().begin(), t.corpus.pixels().end());
  return t;
}

metrics::SamplerFn model_sampler(const model::Denoiser& model, const TestSet& test,
                                 const diffusion::SamplerConfig& sampler,
                                 const diffusion::ScheduleConfig& schedule) {
  return [&model, &test, sampler, schedule](std::int64_t cond_index, std::int64_t count, std::uint64_t seed) {
    const auto& image = test.corpus.image_shape();
    const auto batch = encoders::repeat_context(test.contexts.at(static_cast<std::uint64_t>(cond_index)), count);
    const auto cond = model::make_conditioning<float>(batch);
    const auto uncond = model::make_conditioning<float>(batch, std::vector<bool>(static_cast<std::size_t>(count), false));
    Rng rng(seed);
    const Tensor out = diffusion::sample<float>(model.bind(&cond), model.bind(&uncond), sampler, schedule,
                                                {count, image.height, image.width, image.channels}, rng);
    metrics::ItemSet items{image.size(), std::vector<float>(out.data().begin(), out.data().end())};
    for (auto& v : items.data) v = std::clamp(v, -1.0f, 1.0f);
    return items;
  };
}

metrics::ExtractorFn image_extractor(const encoders::Encoder& extractor) {
  return [&extractor](const metrics::ItemSet& items) {
    return metrics::extract_features(extractor, items.data, items.count());
  };
}

train::TrainResult train_model(const PipelineConfig& cfg, data::PairMode mode, const data::Corpus& corpus,
                               const encoders::EmbeddingTable& contexts, const fs::path& out_dir, bool resume,
                               const Manifest* manifest) {
  PipelineConfig run = cfg;
  run.train.objective = mode;
  Manifest m{"train", run.train.seed, run.to_config(), {}, {}};
  if (manifest != nullptr) m = *manifest;
  m.outputs = {{"checkpoint", "checkpoint.semc"}, {"loss", "loss.csv"}, {"timing", "timing.csv"}};
  m.write(out_dir);

  std::optional<encoders::EmbeddingTable> filter_table;
  if (run.filter) filter_table = encoders::embed_corpus(run.filter->encoder, corpus);
  data::BatchIterator it(corpus, contexts, mode, run.train.batch_size, derive_seed(run.train.seed, "data"),
                         run.filter, filter_table ? &*filter_table : nullptr);
  train::Trainer trainer(run.model, run.train, run.schedule, run.to_config());
  const auto ck_path = out_dir / "checkpoint.semc";
  if (resume && fs::exists(ck_path)) trainer.resume(Checkpoint::read(ck_path), it);
  return trainer.run(it, out_dir);
}

metrics::FewShotResult evaluate_checkpoint(const Checkpoint& ck, const TestSet& test, const EvalSettings& eval,
                                           double g) {
  const auto model = train::load_denoiser(ck, eval.use_ema);
  const auto schedule = train::schedule_from_config(ck.config.subset("schedule."));
  const encoders::Encoder extractor(eval.extractor);
  auto sampler = eval.sampler;
  sampler.guidance = g;
  auto fewshot = eval.fewshot;
  fewshot.guidance = g;
  auto run = metrics::fewshot_run(fewshot, test.items, model_sampler(model, test, sampler, schedule),
                                  image_extractor(extractor));
  run.report.config.set("steps", sampler.num_steps);
  run.report.config.set("eta", sampler.variance_interp);
  run.report.config.set("use_ema", eval.use_ema);
  return run;
}

void write_fewshot_mosaic(const fs::path& path, const metrics::FewShotResult& run, const TestSet& test,
                          std::int64_t max_rows) {
  const auto rows = std::min<std::int64_t>(max_rows, static_cast<std::int64_t>(run.conditions.size()));
  if (rows == 0) return;
  const std::int64_t per = run.samples.count() / static_cast<std::int64_t>(run.conditions.size());
  const auto item = static_cast<std::size_t>(run.samples.item_size);
  std::vector<std::vector<float>> conds, samples;
  for (std::int64_t r = 0; r < rows; ++r) {
    const auto c = test.items.item(run.conditions[static_cast<std::size_t>(r)]);
    conds.emplace_back(c.begin(), c.end());
    const auto first = run.samples.data.begin() + static_cast<std::ptrdiff_t>(r * per * item);
    samples.emplace_back(first, first + static_cast<std::ptrdiff_t>(per * item));
  }
  io::write_png(path, io::sample_mosaic(conds, samples, test.corpus.image_shape()));
}

std::string comparison_csv(std::span<const ModelRow> rows) {
  std::ostringstream out;
  out << "model,objective,conditioning_mode,fid,precision,recall,diversity\n";
  for (const auto& r : rows) {
    out << r.name << ',' << r.objective << ',' << r.conditioning << ',' << format_double(r.report.fid) << ','
        << format_double(r.report.precision) << ',' << format_double(r.report.recall) << ','
        << format_double(r.report.diversity) << '\n';
  }
  return out.str();
}

namespace {

struct Prepared {
  PipelineConfig cfg;
  data::Corpus train;
  encoders::EmbeddingTable contexts;
  TestSet test;
};

// Generates (and stores under <out>/data) the train and test corpora and
// their context embeddings.
Prepared prepare(const Config& raw, const fs::path& out_dir) {
  auto cfg = PipelineConfig::from_config(raw);
  const fs::path data_dir = out_dir / "data";
  fs::create_directories(data_dir);
  auto train = data::generate_corpus(cfg.train_data);
  train.write(data_dir / "train.epis");
  auto contexts = encoders::embed_corpus(cfg.encoder, train);
  contexts.write(data_dir / "train.embd");
  auto test = make_test_set(data::generate_corpus(cfg.test_data), cfg.encoder);
  test.corpus.write(data_dir / "test.epis");
  test.contexts.write(data_dir / "test.embd");
  return {std::move(cfg), std::move(train), std::move(contexts), std::move(test)};
}

ModelRow train_and_evaluate(const Prepared& p, const std::string& name, data::PairMode mode,
                            const PipelineConfig& cfg, const fs::path& dir) {
  const auto result = train_model(cfg, mode, p.train, p.contexts, dir);
  const auto run = evaluate_checkpoint(result.checkpoint, p.test, cfg.eval, cfg.eval.fewshot.guidance);
  write_file_atomic(dir / "report.txt", run.report.to_text());
  write_fewshot_mosaic(dir / "samples.png", run, p.test);
  return {name, data::to_string(mode), model::to_string(cfg.model.conditioning), run.report};
}

}  // namespace

CollapseResult run_collapse(const Config& raw, const fs::path& out_dir) {
  const auto cfg = PipelineConfig::from_config(raw);
  Manifest m{"exp-collapse", cfg.train.seed, cfg.to_config(), {}, {}};
  m.outputs = {{"table", "collapse.csv"}, {"report", "report.txt"}, {"recon", "recon/"}, {"pair", "pair/"}};
  m.write(out_dir);
  const auto p = prepare(raw, out_dir);

  CollapseResult r;
  r.recon = train_and_evaluate(p, "recon", data::PairMode::kReconstruction, p.cfg, out_dir / "recon");
  r.pair = train_and_evaluate(p, "pair", data::PairMode::kPair, p.cfg, out_dir / "pair");
  r.diversity_lower = r.recon.report.diversity < r.pair.report.diversity;
  r.recall_lower = r.recon.report.recall < r.pair.report.recall;

  const std::vector<ModelRow> rows{r.recon, r.pair};
  write_file_atomic(out_dir / "collapse.csv", comparison_csv(rows));
  std::ostringstream rep;
  rep << "recon_diversity: " << format_double(r.recon.report.diversity) << '\n'
      << "pair_diversity: " << format_double(r.pair.report.diversity) << '\n'
      << "recon_recall: " << format_double(r.recon.report.recall) << '\n'
      << "pair_recall: " << format_double(r.pair.report.recall) << '\n'
      << "recon_precision: " << format_double(r.recon.report.precision) << '\n'
      << "pair_precision: " << format_double(r.pair.report.precision) << '\n'
      << "check.diversity_recon_below_pair: " << (r.diversity_lower ? "holds" : "violated") << '\n'
      << "check.recall_recon_below_pair: " << (r.recall_lower ? "holds" : "violated") << '\n';
  write_file_atomic(out_dir / "report.txt", rep.str());
  return r;
}

std::vector<ModelRow> run_conditioning(const Config& raw, const fs::path& out_dir) {
  const auto cfg = PipelineConfig::from_config(raw);
  Manifest m{"exp-conditioning", cfg.train.seed, cfg.to_config(), {}, {}};
  m.outputs = {{"table", "conditioning.csv"}, {"film", "film/"}, {"cross", "cross-attention/"}};
  m.write(out_dir);
  const auto p = prepare(raw, out_dir);

  std::vector<ModelRow> rows;
  for (auto mode : {model::ConditioningMode::kFilm, model::ConditioningMode::kCrossAttention}) {
    PipelineConfig c = p.cfg;
    c.model.conditioning = mode;
    const auto name = model::to_string(mode);
    rows.push_back(train_and_evaluate(p, name, c.train.objective, c, out_dir / name));
  }
  write_file_atomic(out_dir / "conditioning.csv", comparison_csv(rows));
  return rows;
}

std::vector<metrics::SweepRow> run_guidance(const fs::path& checkpoint, std::span<const double> g_values,
                                            const fs::path& out_dir, const Config& overrides) {
  if (g_values.empty()) throw UsageError("exp-guidance: empty guidance list");
  const auto ck = Checkpoint::read(checkpoint);
  Config raw = ck.config;
  raw.merge(overrides);
  const auto cfg = PipelineConfig::from_config(raw);

  Manifest m{"exp-guidance", cfg.eval.fewshot.seed, cfg.to_config(), {{"checkpoint", checkpoint.string()}}, {}};
  std::string g_list;
  for (double g : g_values) g_list += (g_list.empty() ? "" : ",") + format_double(g);
  m.config.set("g_list", g_list);
  m.outputs = {{"table", "guidance.csv"}, {"plot", "pr_scatter.png"}};
  m.write(out_dir);

  const auto test = make_test_set(data::generate_corpus(cfg.test_data), cfg.encoder);
  std::vector<metrics::SweepRow> rows;
  for (double g : g_values) {
    const auto run = evaluate_checkpoint(ck, test, cfg.eval, g);
    write_fewshot_mosaic(out_dir / ("samples_g" + format_double(g) + ".png"), run, test);
    rows.push_back({g, run.report});
  }
  write_file_atomic(out_dir / "guidance.csv", metrics::sweep_csv(rows));
  std::vector<double> precision, recall;
  for (const auto& r : rows) {
    precision.push_back(r.report.precision);
    recall.push_back(r.report.recall);
  }
  io::write_png(out_dir / "pr_scatter.png", io::pr_scatter(precision, recall));
  return rows;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    Config c;
    c.set("v", item);
    out.push_back(c.get_double("v"));
  }
  return out;
}

}  // namespace semvar::exp
