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

// semvar command-line tool.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "semvar/binary_io.hpp"
#include "semvar/checkpoint.hpp"
#include "semvar/config.hpp"
#include "semvar/encoders.hpp"
#include "semvar/episodic.hpp"
#include "semvar/errors.hpp"
#include "semvar/experiments.hpp"
#include "semvar/image_io.hpp"
#include "semvar/metrics.hpp"
#include "semvar/trainer.hpp"

namespace fs = std::filesystem;
using namespace semvar;

namespace {

// Config file (optional) overridden by --set key=value flags.
Config load_config(const std::string& path, const std::vector<std::string>& sets) {
  Config cfg = path.empty() ? Config{} : Config::load(path);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

void write_file_manifest(const fs::path& out, exp::Manifest m) {
  m.outputs["file"] = out.filename().string();
  const auto dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
  fs::create_directories(dir);
  write_file_atomic(dir / (out.filename().string() + ".manifest.txt"), m.to_text());
}

exp::TestSet load_test_set(const std::string& testset, const exp::PipelineConfig& cfg) {
  data::Corpus corpus = testset.empty() ? data::generate_corpus(cfg.test_data) : data::Corpus::read(testset);
  return exp::make_test_set(std::move(corpus), cfg.encoder);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semvar: image variations from conditioned diffusion"};
  app.require_subcommand(1);

  // gen-data
  std::uint64_t episodes = 0, seed = 0;
  std::uint32_t members = 4;
  int height = 16, width = 16, channels = 3;
  std::string out;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic episode shard");
  gen->add_option("--episodes", episodes, "Number of episodes")->required();
  gen->add_option("--members", members, "Images per episode")->capture_default_str();
  gen->add_option("--seed", seed, "Random seed")->capture_default_str();
  gen->add_option("--height", height)->capture_default_str();
  gen->add_option("--width", width)->capture_default_str();
  gen->add_option("--channels", channels)->capture_default_str();
  gen->add_option("--out", out, "Shard file")->required();

  // embed
  std::string shard, embeddings, config_path;
  std::vector<std::string> sets;
  auto* embed = app.add_subcommand("embed", "Precompute context embeddings for a shard");
  embed->add_option("--shard", shard)->required();
  embed->add_option("--config", config_path, "key=value file of encoder settings (kind, seed, ...)");
  embed->add_option("--set", sets, "Override an encoder setting, key=value");
  embed->add_option("--out", out, "Embedding file")->required();

  // filter-pairs
  double low = 0.5, high = 0.999;
  auto* filt = app.add_subcommand("filter-pairs", "Filter intra-episode pairs by cls cosine similarity");
  filt->add_option("--shard", shard)->required();
  filt->add_option("--embeddings", embeddings)->required();
  filt->add_option("--low", low)->capture_default_str();
  filt->add_option("--high", high)->capture_default_str();
  filt->add_option("--out", out, "Pair list file")->required();

  // train
  std::string mode;
  bool resume = false;
  auto* trn = app.add_subcommand("train", "Train a denoiser");
  trn->add_option("--mode", mode, "recon | pair | label-grouped")->required();
  trn->add_option("--config", config_path);
  trn->add_option("--set", sets, "Override a config entry, key=value");
  trn->add_option("--shard", shard, "Training shard (default: generated from data.*)");
  trn->add_option("--embeddings", embeddings, "Context embeddings (default: computed with encoder.*)");
  trn->add_flag("--resume", resume, "Continue from <out>/checkpoint.semc");
  trn->add_option("--out", out, "Output directory")->required();

  // sample
  std::string checkpoint, testset;
  std::uint64_t cond_image = 0;
  std::int64_t n = 1;
  double guidance = 0.0;
  int steps = 0;
  bool raw_params = false;
  auto* smp = app.add_subcommand("sample", "Sample variations of one image");
  smp->add_option("--checkpoint", checkpoint)->required();
  smp->add_option("--cond-image", cond_image, "Image id in the shard")->required();
  smp->add_option("--shard", shard, "Shard holding the image (default: the checkpoint's test corpus)");
  smp->add_option("--n", n)->capture_default_str();
  smp->add_option("--guidance", guidance)->capture_default_str();
  smp->add_option("--steps", steps, "Sampler steps (default: eval.steps of the checkpoint)");
  smp->add_option("--seed", seed)->capture_default_str();
  smp->add_flag("--raw", raw_params, "Use raw instead of averaged parameters");
  smp->add_option("--out", out, "Output directory")->required();

  // eval-fewshot
  std::int64_t big_n = 0, big_k = 0;
  auto* evl = app.add_subcommand("eval-fewshot", "Few-shot FID / precision / recall / diversity");
  evl->add_option("--checkpoint", checkpoint)->required();
  evl->add_option("--testset", testset, "Test shard (default: the checkpoint's test corpus)");
  evl->add_option("--N", big_n, "Test images and samples")->required();
  evl->add_option("--K", big_k, "Conditioning images")->required();
  evl->add_option("--guidance", guidance)->capture_default_str();
  evl->add_option("--seed", seed)->capture_default_str();
  evl->add_option("--steps", steps, "Sampler steps (default: eval.steps of the checkpoint)");
  evl->add_option("--out", out, "Optional output directory for report and sample grid");

  // experiments
  auto* col = app.add_subcommand("exp-collapse", "Reconstruction vs pair objective");
  col->add_option("--config", config_path)->required();
  col->add_option("--set", sets);
  col->add_option("--out", out)->required();
  auto* cnd = app.add_subcommand("exp-conditioning", "FiLM vs cross-attention conditioning");
  cnd->add_option("--config", config_path)->required();
  cnd->add_option("--set", sets);
  cnd->add_option("--out", out)->required();
  std::string g_list = "0,0.5,1.0";
  auto* gui = app.add_subcommand("exp-guidance", "Guidance sweep of a trained model");
  gui->add_option("--checkpoint", checkpoint)->required();
  gui->add_option("--g-list", g_list)->capture_default_str();
  gui->add_option("--set", sets, "Override recorded eval/test settings, key=value");
  gui->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::kUsage);
  }

  try {
    if (gen->parsed()) {
      data::CorpusConfig cc;
      cc.num_episodes = episodes;
      cc.members_per_episode = members;
      cc.seed = seed;
      cc.image = {height, width, channels};
      exp::Manifest m{"gen-data", seed, {}, {}, {}};
      m.config.set("episodes", episodes);
      m.config.set("members", static_cast<std::int64_t>(members));
      m.config.set("image", cc.image.str());
      write_file_manifest(out, m);
      const auto corpus = data::generate_corpus(cc);
      corpus.write(out);
      std::cout << "wrote " << corpus.num_images() << " images in " << corpus.episodes().size()
                << " episodes (" << cc.image.str() << ") to " << out << '\n';
    } else if (embed->parsed()) {
      const auto spec = encoders::EncoderSpec::from_config(load_config(config_path, sets));
      exp::Manifest m{"embed", spec.seed, spec.to_config(), {{"shard", shard}}, {}};
      write_file_manifest(out, m);
      const auto count = encoders::precompute_embeddings(spec, shard, out);
      std::cout << "wrote " << count << " embeddings (" << spec.id() << ") to " << out << '\n';
    } else if (filt->parsed()) {
      data::FilterConfig fc;
      fc.low_threshold = low;
      fc.high_threshold = high;
      fc.validate();
      exp::Manifest m{"filter-pairs", 0, {}, {{"shard", shard}, {"embeddings", embeddings}}, {}};
      m.config.set("low", low);
      m.config.set("high", high);
      write_file_manifest(out, m);
      const auto corpus = data::Corpus::read(shard);
      const auto table = encoders::EmbeddingTable::read(embeddings);
      const auto pairs = data::enumerate_episode_pairs(corpus);
      const auto kept = data::filter_pairs(pairs, fc, table);
      data::write_pairs(out, kept);
      const double rate = pairs.empty() ? 1.0 : static_cast<double>(kept.size()) / static_cast<double>(pairs.size());
      std::cout << "kept " << kept.size() << " of " << pairs.size() << " pairs (retention "
                << format_double(100.0 * rate) << "%)\n";
    } else if (trn->parsed()) {
      Config raw = load_config(config_path, sets);
      raw.set("train.objective", data::to_string(data::pair_mode_from_string(mode)));
      const auto cfg = exp::PipelineConfig::from_config(raw);
      exp::Manifest m{"train", cfg.train.seed, cfg.to_config(), {}, {}};
      if (!shard.empty()) m.inputs["shard"] = shard;
      if (!embeddings.empty()) m.inputs["embeddings"] = embeddings;
      const auto corpus = shard.empty() ? data::generate_corpus(cfg.train_data) : data::Corpus::read(shard);
      const auto contexts = embeddings.empty() ? encoders::embed_corpus(cfg.encoder, corpus)
                                               : encoders::EmbeddingTable::read(embeddings);
      const auto result = exp::train_model(cfg, cfg.train.objective, corpus, contexts, out, resume, &m);
      std::cout << "trained " << result.steps << " steps";
      if (!result.losses.empty()) {
        std::cout << ", loss " << format_double(result.losses.front()) << " -> "
                  << format_double(result.losses.back());
      }
      std::cout << "; checkpoint " << (fs::path(out) / "checkpoint.semc").string() << '\n';
    } else if (smp->parsed()) {
      const auto ck = Checkpoint::read(checkpoint);
      const auto cfg = exp::PipelineConfig::from_config(ck.config);
      exp::Manifest m{"sample", seed, {}, {{"checkpoint", checkpoint}}, {}};
      if (!shard.empty()) m.inputs["shard"] = shard;
      m.config.set("cond_image", cond_image);
      m.config.set("n", n);
      m.config.set("guidance", guidance);
      m.config.set("steps", static_cast<std::int64_t>(steps > 0 ? steps : cfg.eval.sampler.num_steps));
      m.config.set("use_ema", !raw_params);
      m.outputs = {{"grid", "samples.png"}, {"tensor", "samples.tnsr"}};
      m.write(out);
      if (n < 1) throw UsageError("--n must be positive");
      const auto corpus = shard.empty() ? data::generate_corpus(cfg.test_data) : data::Corpus::read(shard);
      if (cond_image >= corpus.num_images()) throw DataError("no image " + std::to_string(cond_image) + " in shard");
      const encoders::Encoder encoder(cfg.encoder);
      const auto ctx = encoder.encode({corpus.image(cond_image), &corpus.factors(cond_image), cond_image});
      const auto model = train::load_denoiser(ck, !raw_params);
      auto sampler = cfg.eval.sampler;
      if (steps > 0) sampler.num_steps = steps;
      sampler.guidance = guidance;
      const auto batch = encoders::repeat_context(ctx, n);
      const auto cond = model::make_conditioning<float>(batch);
      const auto uncond = model::make_conditioning<float>(batch, std::vector<bool>(static_cast<std::size_t>(n), false));
      Rng rng(seed);
      const auto& image = corpus.image_shape();
      Tensor samples = diffusion::sample<float>(model.bind(&cond), model.bind(&uncond), sampler, cfg.schedule,
                                                {n, image.height, image.width, image.channels}, rng);
      for (auto& v : samples.mutable_data()) v = std::clamp(v, -1.0f, 1.0f);
      io::write_tensor(fs::path(out) / "samples.tnsr", samples);
      const auto c = corpus.image(cond_image);
      const std::vector<std::vector<float>> conds{{c.begin(), c.end()}};
      const std::vector<std::vector<float>> rows{{samples.data().begin(), samples.data().end()}};
      io::write_png(fs::path(out) / "samples.png", io::sample_mosaic(conds, rows, image));
      std::cout << "wrote " << n << " samples of image " << cond_image << " to " << out << '\n';
    } else if (evl->parsed()) {
      const auto ck = Checkpoint::read(checkpoint);
      const auto cfg = exp::PipelineConfig::from_config(ck.config);
      auto eval = cfg.eval;
      eval.fewshot.n = big_n;
      eval.fewshot.k = big_k;
      eval.fewshot.seed = seed;
      if (steps > 0) eval.sampler.num_steps = steps;
      eval.fewshot.validate();
      if (!out.empty()) {
        exp::Manifest m{"eval-fewshot", seed, eval.to_config(), {{"checkpoint", checkpoint}}, {}};
        if (!testset.empty()) m.inputs["testset"] = testset;
        m.config.set("guidance", guidance);
        m.outputs = {{"report", "report.txt"}, {"grid", "samples.png"}};
        m.write(out);
      }
      const auto test = load_test_set(testset, cfg);
      const auto run = exp::evaluate_checkpoint(ck, test, eval, guidance);
      std::cout << run.report.to_text();
      if (!out.empty()) {
        write_file_atomic(fs::path(out) / "report.txt", run.report.to_text());
        exp::write_fewshot_mosaic(fs::path(out) / "samples.png", run, test);
      }
    } else if (col->parsed()) {
      const auto r = exp::run_collapse(load_config(config_path, sets), out);
      const std::vector<exp::ModelRow> rows{r.recon, r.pair};
      std::cout << exp::comparison_csv(rows)
                << "diversity recon < pair: " << (r.diversity_lower ? "holds" : "violated") << '\n'
                << "recall recon < pair: " << (r.recall_lower ? "holds" : "violated") << '\n';
    } else if (cnd->parsed()) {
      std::cout << exp::comparison_csv(exp::run_conditioning(load_config(config_path, sets), out));
    } else if (gui->parsed()) {
      const auto g = exp::parse_double_list(g_list);
      std::cout << metrics::sweep_csv(exp::run_guidance(checkpoint, g, out, load_config("", sets)));
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::kData);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::kNumerical);
  }
  return 0;
}
