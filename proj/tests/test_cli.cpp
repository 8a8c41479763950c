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
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

namespace {

namespace fs = std::filesystem;

const fs::path& root() {
  static const fs::path dir = [] {
    const auto d = fs::temp_directory_path() / "semvar_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(const std::string& args) {
  static int counter = 0;
  const auto out = root() / ("stdout" + std::to_string(counter) + ".txt");
  const auto err = root() / ("stderr" + std::to_string(counter++) + ".txt");
  const std::string cmd = std::string(SEMVAR_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::string path(const std::string& name) { return (root() / name).string(); }

// 8x8 pipeline small enough to train in well under a second.
const std::string& tiny_config() {
  static const std::string file = [] {
    const auto p = root() / "tiny.cfg";
    std::ofstream(p) << "data.episodes = 8\ndata.members = 3\ntest.episodes = 6\ntest.members = 2\n"
                        "encoder.kind = oracle-factor\nencoder.patch_size = 4\nencoder.width = 32\n"
                        "model.image_height = 8\nmodel.image_width = 8\nmodel.patch_size = 2\n"
                        "model.d_model = 16\nmodel.num_blocks = 1\nmodel.num_heads = 2\n"
                        "model.context_tokens = 4\nmodel.context_dim = 32\nmodel.time_dim = 16\n"
                        "train.batch_size = 4\ntrain.num_steps = 6\ntrain.checkpoint_every = 3\n"
                        "train.seed = 3\ntrain.learning_rate = 0.002\n"
                        "eval.n = 12\neval.k = 3\neval.steps = 3\n";
    return p.string();
  }();
  return file;
}

TEST(CliTest, UsageErrorsExitWithOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("no-such-command").code, 1);
  EXPECT_EQ(run("gen-data --episodes 2").code, 1);
  EXPECT_EQ(run("--help").code, 0);
}

TEST(CliTest, GenDataSummaryAndDeterminism) {
  const auto a = run("gen-data --episodes 5 --members 3 --seed 9 --out " + path("a.shard"));
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.out.find("wrote 15 images in 5 episodes"), std::string::npos) << a.out;
  ASSERT_EQ(run("gen-data --episodes 5 --members 3 --seed 9 --out " + path("b.shard")).code, 0);
  EXPECT_EQ(slurp(path("a.shard")), slurp(path("b.shard")));
  EXPECT_TRUE(fs::exists(root() / "a.shard.manifest.txt"));
}

TEST(CliTest, EmptyShardSucceeds) {
  const auto r = run("gen-data --episodes 0 --out " + path("empty.shard"));
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("wrote 0 images"), std::string::npos);
}

TEST(CliTest, FilterPairsRetention) {
  ASSERT_EQ(run("gen-data --episodes 4 --members 3 --out " + path("f.shard")).code, 0);
  const auto e = run("embed --shard " + path("f.shard") + " --set kind=oracle-factor --out " + path("f.embd"));
  ASSERT_EQ(e.code, 0) << e.err;
  const auto all = run("filter-pairs --shard " + path("f.shard") + " --embeddings " + path("f.embd") +
                       " --low -1 --high 1 --out " + path("f.pairs"));
  ASSERT_EQ(all.code, 0) << all.err;
  EXPECT_NE(all.out.find("kept 24 of 24 pairs (retention 100%)"), std::string::npos) << all.out;
  EXPECT_EQ(run("filter-pairs --shard " + path("f.shard") + " --embeddings " + path("f.embd") +
                " --low 0.9 --high 0.5 --out " + path("g.pairs"))
                .code,
            1);
}

TEST(CliTest, MissingInputsAreDataErrors) {
  const auto r = run("filter-pairs --shard " + path("nope.shard") + " --embeddings " + path("nope.embd") +
                     " --out " + path("x.pairs"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  const auto t = run("train --mode pair --config " + tiny_config() + " --shard " + path("nope.shard") +
                     " --out " + path("nope_run"));
  EXPECT_EQ(t.code, 2);
  EXPECT_FALSE(t.err.empty());
  EXPECT_EQ(run("sample --checkpoint " + path("nope.semc") + " --cond-image 0 --out " + path("nope_s")).code, 2);
}

TEST(CliTest, TrainSampleEvalAreDeterministic) {
  for (const char* dir : {"run1", "run2"}) {
    const auto r = run("train --mode pair --config " + tiny_config() + " --out " + path(dir));
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (const char* f : {"loss.csv", "checkpoint.semc", "manifest.txt"}) {
    EXPECT_EQ(slurp(root() / "run1" / f), slurp(root() / "run2" / f)) << f;
  }

  // Three steps, then resume to six, matches the straight run.
  ASSERT_EQ(run("train --mode pair --config " + tiny_config() + " --set train.num_steps=3 --out " + path("run3")).code, 0);
  const auto resumed = run("train --mode pair --config " + tiny_config() + " --resume --out " + path("run3"));
  ASSERT_EQ(resumed.code, 0) << resumed.err;
  EXPECT_EQ(slurp(root() / "run3" / "checkpoint.semc"), slurp(root() / "run1" / "checkpoint.semc"));
  EXPECT_EQ(slurp(root() / "run3" / "loss.csv"), slurp(root() / "run1" / "loss.csv"));

  const std::string ck = (root() / "run1" / "checkpoint.semc").string();
  for (const char* dir : {"s1", "s2"}) {
    const auto r = run("sample --checkpoint " + ck + " --cond-image 1 --n 3 --steps 2 --out " + path(dir));
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(slurp(root() / "s1" / "samples.tnsr"), slurp(root() / "s2" / "samples.tnsr"));
  EXPECT_EQ(slurp(root() / "s1" / "samples.png"), slurp(root() / "s2" / "samples.png"));
  ASSERT_EQ(run("sample --checkpoint " + ck + " --cond-image 1 --n 3 --steps 2 --guidance 1 --out " + path("s3")).code, 0);
  EXPECT_NE(slurp(root() / "s1" / "samples.tnsr"), slurp(root() / "s3" / "samples.tnsr"));
  EXPECT_EQ(run("sample --checkpoint " + ck + " --cond-image 1000 --out " + path("s4")).code, 2);

  EXPECT_EQ(run("eval-fewshot --checkpoint " + ck + " --N 12 --K 5").code, 1);
  const auto e1 = run("eval-fewshot --checkpoint " + ck + " --N 12 --K 3 --seed 4 --out " + path("e1"));
  const auto e2 = run("eval-fewshot --checkpoint " + ck + " --N 12 --K 3 --seed 4");
  ASSERT_EQ(e1.code, 0) << e1.err;
  EXPECT_EQ(e1.out, e2.out);
  EXPECT_NE(e1.out.find("samples_per_condition: 4"), std::string::npos) << e1.out;
  EXPECT_EQ(slurp(root() / "e1" / "report.txt"), e1.out);

  const auto g = run("exp-guidance --checkpoint " + ck + " --g-list 0,0.5,1.0 --out " + path("g1"));
  ASSERT_EQ(g.code, 0) << g.err;
  const auto csv = slurp(root() / "g1" / "guidance.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "g,fid,precision,recall,diversity");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_TRUE(fs::exists(root() / "g1" / "pr_scatter.png"));
  EXPECT_TRUE(fs::exists(root() / "g1" / "manifest.txt"));
}

}  // namespace
