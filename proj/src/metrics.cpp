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

#include "semvar/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "semvar/errors.hpp"
#include "semvar/random.hpp"

namespace semvar::metrics {

FeatureSet::FeatureSet(std::int64_t rows_, std::int64_t dim_, std::vector<double> values_,
                       std::string extractor_id_)
    : rows(rows_), dim(dim_), values(std::move(values_)), extractor_id(std::move(extractor_id_)) {
  if (rows < 0 || dim < 0 || static_cast<std::int64_t>(values.size()) != rows * dim) {
    throw UsageError("FeatureSet: values do not match rows x dim");
  }
}

void FeatureSet::validate() const {
  if (static_cast<std::int64_t>(values.size()) != rows * dim) throw UsageError("FeatureSet: bad size");
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericalError("FeatureSet: non-finite feature");
  }
}

FeatureSet extract_features(const encoders::Encoder& extractor, std::span<const float> images,
                            std::int64_t count, std::span<const ImageFactors> factors) {
  const auto item = static_cast<std::size_t>(extractor.spec().image.size());
  if (images.size() != item * static_cast<std::size_t>(count)) {
    throw UsageError("extract_features: image buffer does not match " + extractor.spec().image.str());
  }
  if (!factors.empty() && static_cast<std::int64_t>(factors.size()) != count) {
    throw UsageError("extract_features: factor count mismatch");
  }
  std::vector<encoders::EncoderInput> inputs(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    inputs[i].pixels = images.subspan(i * item, item);
    if (!factors.empty()) inputs[i].factors = &factors[i];
  }
  const auto encoded = extractor.encode_batch(inputs);
  const std::int64_t dim = extractor.spec().dim();
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(count * dim));
  for (const auto& ctx : encoded) values.insert(values.end(), ctx.cls.begin(), ctx.cls.end());
  return FeatureSet(count, dim, std::move(values), extractor.spec().id());
}

namespace {

using Matrix = Eigen::MatrixXd;

Matrix to_matrix(const std::vector<double>& cov, std::int64_t d) {
  Matrix m(d, d);
  for (std::int64_t i = 0; i < d; ++i) {
    for (std::int64_t j = 0; j < d; ++j) m(i, j) = cov[static_cast<std::size_t>(i * d + j)];
  }
  return m;
}

Matrix sqrt_psd(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  if (es.info() != Eigen::Success) throw NumericalError("frechet_distance: eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

GaussianMoments fit_moments(const FeatureSet& fs) {
  if (fs.rows < 2) throw UsageError("fit_moments: need at least two feature rows");
  fs.validate();
  const auto d = static_cast<std::size_t>(fs.dim);
  GaussianMoments g{std::vector<double>(d, 0.0), std::vector<double>(d * d, 0.0)};
  for (std::int64_t i = 0; i < fs.rows; ++i) {
    const auto r = fs.row(i);
    for (std::size_t j = 0; j < d; ++j) g.mean[j] += r[j];
  }
  for (auto& m : g.mean) m /= static_cast<double>(fs.rows);
  std::vector<double> c(d);
  for (std::int64_t i = 0; i < fs.rows; ++i) {
    const auto r = fs.row(i);
    for (std::size_t j = 0; j < d; ++j) c[j] = r[j] - g.mean[j];
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = a; b < d; ++b) g.covariance[a * d + b] += c[a] * c[b];
    }
  }
  const double norm = 1.0 / static_cast<double>(fs.rows - 1);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      g.covariance[a * d + b] *= norm;
      g.covariance[b * d + a] = g.covariance[a * d + b];
    }
  }
  return g;
}

double frechet_distance(const FeatureSet& a, const FeatureSet& b) {
  if (a.dim != b.dim) throw UsageError("frechet_distance: feature dims differ");
  const auto ma = fit_moments(a);
  const auto mb = fit_moments(b);
  const std::int64_t d = a.dim;
  double mean_term = 0.0;
  for (std::int64_t i = 0; i < d; ++i) {
    const double diff = ma.mean[static_cast<std::size_t>(i)] - mb.mean[static_cast<std::size_t>(i)];
    mean_term += diff * diff;
  }
  const Matrix sa = to_matrix(ma.covariance, d);
  const Matrix sb = to_matrix(mb.covariance, d);
  const Matrix ra = sqrt_psd(sa);
  Matrix inner = ra * sb * ra;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(inner, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("frechet_distance: eigendecomposition failed");
  const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double fid = mean_term + sa.trace() + sb.trace() - 2.0 * cross;
  if (!std::isfinite(fid)) throw NumericalError("frechet_distance: non-finite result");
  return std::max(fid, 0.0);
}

double euclidean(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

bool ManifoldEstimate::covers(std::span<const double> x) const {
  for (std::int64_t i = 0; i < points->rows; ++i) {
    if (euclidean(x, points->row(i)) <= radii[static_cast<std::size_t>(i)]) return true;
  }
  return false;
}

ManifoldEstimate build_manifold(const FeatureSet& fs, int k) {
  if (k < 1 || k >= fs.rows) throw UsageError("build_manifold: need 1 <= k < M");
  ManifoldEstimate m{&fs, std::vector<double>(static_cast<std::size_t>(fs.rows)), k};
  std::vector<double> dist(static_cast<std::size_t>(fs.rows - 1));
  for (std::int64_t i = 0; i < fs.rows; ++i) {
    std::size_t n = 0;
    for (std::int64_t j = 0; j < fs.rows; ++j) {
      if (j != i) dist[n++] = euclidean(fs.row(i), fs.row(j));
    }
    std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
    m.radii[static_cast<std::size_t>(i)] = dist[static_cast<std::size_t>(k - 1)];
  }
  return m;
}

PrecisionRecall knn_precision_recall(const FeatureSet& real, const FeatureSet& gen, int k) {
  if (real.dim != gen.dim) throw UsageError("knn_precision_recall: feature dims differ");
  if (k >= std::min(real.rows, gen.rows)) throw UsageError("knn_precision_recall: k too large for the sets");
  const auto real_m = build_manifold(real, k);
  const auto gen_m = build_manifold(gen, k);
  std::int64_t in_real = 0, in_gen = 0;
  for (std::int64_t i = 0; i < gen.rows; ++i) in_real += real_m.covers(gen.row(i)) ? 1 : 0;
  for (std::int64_t i = 0; i < real.rows; ++i) in_gen += gen_m.covers(real.row(i)) ? 1 : 0;
  return {static_cast<double>(in_real) / static_cast<double>(gen.rows),
          static_cast<double>(in_gen) / static_cast<double>(real.rows)};
}

double mean_pairwise_distance(const FeatureSet& fs) {
  if (fs.rows < 2) return 0.0;
  double total = 0.0;
  std::int64_t pairs = 0;
  for (std::int64_t i = 0; i < fs.rows; ++i) {
    for (std::int64_t j = i + 1; j < fs.rows; ++j) {
      total += euclidean(fs.row(i), fs.row(j));
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

void FewShotConfig::validate() const {
  if (k < 1) throw UsageError("few-shot: K must be at least 1");
  if (n < k || n % k != 0) throw UsageError("few-shot: K must divide N");
  if (knn_k < 1) throw UsageError("few-shot: k-NN k must be positive");
}

Config FewShotConfig::to_config() const {
  Config c;
  c.set("n", n);
  c.set("k", k);
  c.set("samples_per_condition", samples_per_condition());
  c.set("guidance", guidance);
  c.set("seed", seed);
  c.set("knn_k", knn_k);
  return c;
}

std::string MetricReport::to_text() const {
  std::ostringstream out;
  out << "fid: " << format_double(fid) << '\n'
      << "precision: " << format_double(precision) << '\n'
      << "recall: " << format_double(recall) << '\n'
      << "diversity: " << format_double(diversity) << '\n';
  for (const auto& [key, value] : config.entries()) out << key << ": " << value << '\n';
  return out.str();
}

namespace {

FeatureSet subset_rows(const FeatureSet& fs, std::int64_t begin, std::int64_t count) {
  std::vector<double> values(fs.values.begin() + begin * fs.dim, fs.values.begin() + (begin + count) * fs.dim);
  return FeatureSet(count, fs.dim, std::move(values), fs.extractor_id);
}

}  // namespace

FewShotResult fewshot_run(const FewShotConfig& cfg, const ItemSet& test, const SamplerFn& sampler,
                          const ExtractorFn& extractor) {
  cfg.validate();
  if (test.count() < cfg.n) {
    throw DataError("few-shot: need " + std::to_string(cfg.n) + " test items, have " +
                    std::to_string(test.count()));
  }
  ItemSet real{test.item_size, std::vector<float>(test.data.begin(), test.data.begin() + cfg.n * test.item_size)};

  // Partial Fisher-Yates: first K entries are a uniform draw without replacement.
  Rng rng(derive_seed(cfg.seed, "fewshot.conditions"));
  std::vector<std::int64_t> order(static_cast<std::size_t>(cfg.n));
  std::iota(order.begin(), order.end(), 0);
  for (std::int64_t i = 0; i < cfg.k; ++i) {
    const auto j = i + static_cast<std::int64_t>(rng.index(static_cast<std::size_t>(cfg.n - i)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  FewShotResult result;
  result.conditions.assign(order.begin(), order.begin() + cfg.k);

  const std::int64_t per = cfg.samples_per_condition();
  result.samples.item_size = test.item_size;
  result.samples.data.reserve(static_cast<std::size_t>(cfg.n * test.item_size));
  for (std::int64_t c = 0; c < cfg.k; ++c) {
    const auto idx = result.conditions[static_cast<std::size_t>(c)];
    const ItemSet group = sampler(idx, per, derive_seed(cfg.seed, static_cast<std::uint64_t>(c), 0x73616d70));
    if (group.item_size != test.item_size || group.count() != per) {
      throw NumericalError("few-shot: sampler returned the wrong number or size of items");
    }
    result.samples.data.insert(result.samples.data.end(), group.data.begin(), group.data.end());
  }

  const FeatureSet real_f = extractor(real);
  const FeatureSet gen_f = extractor(result.samples);
  if (real_f.rows != cfg.n || gen_f.rows != cfg.n) throw UsageError("few-shot: extractor row count mismatch");

  auto& r = result.report;
  r.fid = frechet_distance(real_f, gen_f);
  const auto pr = knn_precision_recall(real_f, gen_f, cfg.knn_k);
  r.precision = pr.precision;
  r.recall = pr.recall;
  double div = 0.0;
  for (std::int64_t c = 0; c < cfg.k; ++c) div += mean_pairwise_distance(subset_rows(gen_f, c * per, per));
  r.diversity = div / static_cast<double>(cfg.k);
  r.config = cfg.to_config();
  r.config.set("extractor", gen_f.extractor_id);
  r.config.set("diversity_metric", "feature-l2 (perceptual proxy)");
  return result;
}

MetricReport fewshot_evaluate(const FewShotConfig& cfg, const ItemSet& test, const SamplerFn& sampler,
                              const ExtractorFn& extractor) {
  return fewshot_run(cfg, test, sampler, extractor).report;
}

std::vector<SweepRow> guidance_sweep(const FewShotConfig& cfg, const ItemSet& test,
                                     const std::function<SamplerFn(double)>& factory,
                                     const ExtractorFn& extractor, std::span<const double> g_values) {
  std::vector<SweepRow> rows;
  for (double g : g_values) {
    FewShotConfig c = cfg;
    c.guidance = g;
    rows.push_back({g, fewshot_evaluate(c, test, factory(g), extractor)});
  }
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out << "g,fid,precision,recall,diversity\n";
  for (const auto& row : rows) {
    out << format_double(row.guidance) << ',' << format_double(row.report.fid) << ','
        << format_double(row.report.precision) << ',' << format_double(row.report.recall) << ','
        << format_double(row.report.diversity) << '\n';
  }
  return out.str();
}

}  // namespace semvar::metrics
