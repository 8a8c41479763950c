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

#ifndef SEMVAR_METRICS_HPP_
#define SEMVAR_METRICS_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "semvar/config.hpp"
#include "semvar/encoders.hpp"
#include "semvar/image.hpp"

namespace semvar::metrics {

// M x D row-major feature matrix.
struct FeatureSet {
  std::int64_t rows = 0;
  std::int64_t dim = 0;
  std::vector<double> values;
  std::string extractor_id;

  FeatureSet() = default;
  FeatureSet(std::int64_t rows, std::int64_t dim, std::vector<double> values, std::string extractor_id = "");

  std::span<const double> row(std::int64_t i) const {
    return {values.data() + i * dim, static_cast<std::size_t>(dim)};
  }
  void validate() const;
};

// cls vectors of `count` images laid out [count, H, W, C]. The oracle-factor
// extractor also needs per-image factors.
FeatureSet extract_features(const encoders::Encoder& extractor, std::span<const float> images,
                            std::int64_t count, std::span<const ImageFactors> factors = {});

struct GaussianMoments {
  std::vector<double> mean;        // D
  std::vector<double> covariance;  // D x D, 1/(M-1) normalized
};
GaussianMoments fit_moments(const FeatureSet& fs);

// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2); negative
// eigenvalues of the symmetric factors are clamped to zero.
double frechet_distance(const FeatureSet& a, const FeatureSet& b);

double euclidean(std::span<const double> a, std::span<const double> b);

// radii[i] is the distance from point i to its k-th nearest other point.
struct ManifoldEstimate {
  const FeatureSet* points = nullptr;
  std::vector<double> radii;
  int k = 3;

  // True if `x` lies within some point's radius.
  bool covers(std::span<const double> x) const;
};
ManifoldEstimate build_manifold(const FeatureSet& fs, int k);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};
PrecisionRecall knn_precision_recall(const FeatureSet& real, const FeatureSet& gen, int k = 3);

// Mean pairwise distance within a set (0 for fewer than two rows).
double mean_pairwise_distance(const FeatureSet& fs);

struct FewShotConfig {
  std::int64_t n = 100;  // test images and generated samples
  std::int64_t k = 10;   // conditioning images
  double guidance = 0.0;
  std::uint64_t seed = 0;
  int knn_k = 3;

  std::int64_t samples_per_condition() const { return n / k; }
  void validate() const;
  Config to_config() const;
};

struct MetricReport {
  double fid = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double diversity = 0.0;  // perceptual proxy: feature-space L2
  Config config;

  std::string to_text() const;
  bool operator==(const MetricReport&) const = default;
};

// Flat item storage; `item_size` floats per item (an image or a raw feature
// vector).
struct ItemSet {
  std::int64_t item_size = 0;
  std::vector<float> data;

  std::int64_t count() const { return item_size == 0 ? 0 : static_cast<std::int64_t>(data.size()) / item_size; }
  std::span<const float> item(std::int64_t i) const {
    return {data.data() + i * item_size, static_cast<std::size_t>(item_size)};
  }
};

// Generates `count` items conditioned on test item `cond_index`, seeded.
using SamplerFn = std::function<ItemSet(std::int64_t cond_index, std::int64_t count, std::uint64_t seed)>;
// Maps items to one feature row each.
using ExtractorFn = std::function<FeatureSet(const ItemSet& items)>;

struct FewShotResult {
  MetricReport report;
  std::vector<std::int64_t> conditions;  // chosen test indices
  ItemSet samples;                       // grouped by condition
};

// Chooses K of the first N test items without replacement, draws N/K samples
// for each and compares the N generated features with the N test features.
FewShotResult fewshot_run(const FewShotConfig& cfg, const ItemSet& test, const SamplerFn& sampler,
                          const ExtractorFn& extractor);
MetricReport fewshot_evaluate(const FewShotConfig& cfg, const ItemSet& test, const SamplerFn& sampler,
                              const ExtractorFn& extractor);

struct SweepRow {
  double guidance = 0.0;
  MetricReport report;
};

// One few-shot evaluation per guidance value with the sampler from `factory`.
std::vector<SweepRow> guidance_sweep(const FewShotConfig& cfg, const ItemSet& test,
                                     const std::function<SamplerFn(double)>& factory,
                                     const ExtractorFn& extractor, std::span<const double> g_values);

// g,fid,precision,recall,diversity
std::string sweep_csv(std::span<const SweepRow> rows);

}  // namespace semvar::metrics

#endif  // SEMVAR_METRICS_HPP_
