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

#include <chrono>
#include <cmath>
#include <vector>

#include "semvar/errors.hpp"
#include "semvar/metrics.hpp"
#include "semvar/random.hpp"

namespace semvar::metrics {
namespace {

using Mat = std::vector<std::vector<double>>;

FeatureSet gaussian_set(std::int64_t rows, std::int64_t dim, Rng& rng, double scale = 1.0,
                        double shift = 0.0) {
  std::vector<double> v(static_cast<std::size_t>(rows * dim));
  for (auto& x : v) x = shift + scale * rng.normal();
  return FeatureSet(rows, dim, std::move(v));
}

// Cyclic Jacobi rotations; returns eigenvalues and fills columns of `vecs`.
std::vector<double> jacobi_eigen(Mat a, Mat& vecs) {
  const std::size_t n = a.size();
  vecs.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) vecs[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = vecs[k][p], vkq = vecs[k][q];
          vecs[k][p] = c * vkp - s * vkq;
          vecs[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i][i];
  return ev;
}

Mat matmul(const Mat& a, const Mat& b) {
  const std::size_t n = a.size();
  Mat c(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < n; ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

Mat sqrt_sym(const Mat& m) {
  Mat v;
  const auto ev = jacobi_eigen(m, v);
  const std::size_t n = m.size();
  Mat r(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k) r[i][j] += v[i][k] * std::sqrt(std::max(ev[k], 0.0)) * v[j][k];
  return r;
}

// Two-pass moments and the Frechet distance via Jacobi square roots.
double oracle_fid(const FeatureSet& a, const FeatureSet& b) {
  const auto d = static_cast<std::size_t>(a.dim);
  auto moments = [d](const FeatureSet& f, std::vector<double>& mu, Mat& cov) {
    mu.assign(d, 0.0);
    cov.assign(d, std::vector<double>(d, 0.0));
    for (std::int64_t r = 0; r < f.rows; ++r)
      for (std::size_t j = 0; j < d; ++j) mu[j] += f.row(r)[j] / static_cast<double>(f.rows);
    for (std::int64_t r = 0; r < f.rows; ++r)
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
          cov[i][j] += (f.row(r)[i] - mu[i]) * (f.row(r)[j] - mu[j]) / static_cast<double>(f.rows - 1);
  };
  std::vector<double> ma, mb;
  Mat sa, sb;
  moments(a, ma, sa);
  moments(b, mb, sb);
  const Mat ra = sqrt_sym(sa);
  const Mat inner_root = sqrt_sym(matmul(matmul(ra, sb), ra));
  double out = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    out += (ma[i] - mb[i]) * (ma[i] - mb[i]) + sa[i][i] + sb[i][i] - 2.0 * inner_root[i][i];
  }
  return out;
}

TEST(FrechetTest, IdenticalSetsGiveZero) {
  Rng rng(1);
  const auto a = gaussian_set(200, 6, rng);
  EXPECT_NEAR(frechet_distance(a, a), 0.0, 1e-9);
}

TEST(FrechetTest, OneDimensionalClosedForm) {
  // Reduces to (mu_a - mu_b)^2 + (sigma_a - sigma_b)^2.
  Rng rng(2);
  const auto a = gaussian_set(500, 1, rng, 1.0, 0.0);
  const auto b = gaussian_set(700, 1, rng, 2.5, 3.0);
  const auto ma = fit_moments(a), mb = fit_moments(b);
  const double sa = std::sqrt(ma.covariance[0]), sb = std::sqrt(mb.covariance[0]);
  const double expected = std::pow(ma.mean[0] - mb.mean[0], 2) + std::pow(sa - sb, 2);
  EXPECT_NEAR(frechet_distance(a, b), expected, 1e-8);
}

TEST(FrechetTest, MatchesJacobiOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const auto a = gaussian_set(60, 8, rng, 1.0 + 0.2 * trial);
    auto b = gaussian_set(80, 8, rng, 0.7, 0.3 * trial);
    for (std::int64_t r = 0; r < b.rows; ++r) b.values[static_cast<std::size_t>(r * 8 + 1)] += b.row(r)[0];
    const double expected = oracle_fid(a, b);
    EXPECT_NEAR(frechet_distance(a, b), expected, 1e-8 * std::max(1.0, expected));
  }
}

TEST(FrechetTest, SymmetricAndShiftBehaviour) {
  Rng rng(4);
  const auto a = gaussian_set(100, 4, rng);
  const auto b = gaussian_set(120, 4, rng, 1.5);
  EXPECT_NEAR(frechet_distance(a, b), frechet_distance(b, a), 1e-9);
  // Shifting one set by c adds |c|^2 to the distance from itself.
  auto shifted = a;
  for (auto& v : shifted.values) v += 0.5;
  EXPECT_NEAR(frechet_distance(a, shifted), 4 * 0.25, 1e-9);
}

TEST(FrechetTest, RejectsBadInput) {
  Rng rng(5);
  const auto a = gaussian_set(10, 3, rng);
  const auto b = gaussian_set(10, 4, rng);
  EXPECT_THROW(frechet_distance(a, b), UsageError);
  const auto one = gaussian_set(1, 3, rng);
  EXPECT_THROW(frechet_distance(a, one), UsageError);
  auto bad = a;
  bad.values[0] = NAN;
  EXPECT_THROW(frechet_distance(a, bad), NumericalError);
}

TEST(KnnTest, HandExample) {
  // Real points on a line at 0, 1, 2, 10; k = 1 radii are 1, 1, 1, 8.
  const FeatureSet real(4, 1, {0, 1, 2, 10});
  const auto m = build_manifold(real, 1);
  EXPECT_EQ(m.radii, (std::vector<double>{1, 1, 1, 8}));
  // Generated points at 3, 2.5, 20, 21; radii 0.5, 0.5, 1, 1.
  const FeatureSet gen(4, 1, {3, 2.5, 20, 21});
  const auto pr = knn_precision_recall(real, gen, 1);
  // 3 and 2.5 fall inside real balls; 20 and 21 do not (10 + 8 = 18).
  EXPECT_DOUBLE_EQ(pr.precision, 0.5);
  // Only 2 lies within 0.5 of 2.5; 10 and the rest are uncovered.
  EXPECT_DOUBLE_EQ(pr.recall, 0.25);
}

PrecisionRecall brute_force(const FeatureSet& real, const FeatureSet& gen, int k) {
  auto radii = [k](const FeatureSet& f) {
    std::vector<double> r(static_cast<std::size_t>(f.rows));
    for (std::int64_t i = 0; i < f.rows; ++i) {
      std::vector<double> d;
      for (std::int64_t j = 0; j < f.rows; ++j) {
        if (j == i) continue;
        double s = 0.0;
        for (std::int64_t c = 0; c < f.dim; ++c) s += std::pow(f.row(i)[c] - f.row(j)[c], 2);
        d.push_back(std::sqrt(s));
      }
      std::sort(d.begin(), d.end());
      r[static_cast<std::size_t>(i)] = d[static_cast<std::size_t>(k - 1)];
    }
    return r;
  };
  auto frac = [](const FeatureSet& pts, const std::vector<double>& rad, const FeatureSet& q) {
    int hit = 0;
    for (std::int64_t i = 0; i < q.rows; ++i) {
      for (std::int64_t j = 0; j < pts.rows; ++j) {
        double s = 0.0;
        for (std::int64_t c = 0; c < q.dim; ++c) s += std::pow(q.row(i)[c] - pts.row(j)[c], 2);
        if (std::sqrt(s) <= rad[static_cast<std::size_t>(j)]) {
          ++hit;
          break;
        }
      }
    }
    return static_cast<double>(hit) / static_cast<double>(q.rows);
  };
  return {frac(real, radii(real), gen), frac(gen, radii(gen), real)};
}

TEST(KnnTest, MatchesBruteForce) {
  Rng rng(6);
  for (int trial = 0; trial < 4; ++trial) {
    const auto real = gaussian_set(300 + 50 * trial, 5, rng);
    const auto gen = gaussian_set(250, 5, rng, 1.0 + 0.3 * trial, 0.2 * trial);
    for (int k : {1, 3, 5}) {
      const auto got = knn_precision_recall(real, gen, k);
      const auto want = brute_force(real, gen, k);
      EXPECT_DOUBLE_EQ(got.precision, want.precision);
      EXPECT_DOUBLE_EQ(got.recall, want.recall);
      const auto swapped = knn_precision_recall(gen, real, k);
      EXPECT_DOUBLE_EQ(swapped.precision, got.recall);
      EXPECT_DOUBLE_EQ(swapped.recall, got.precision);
    }
  }
}

TEST(KnnTest, CopyingGeneratorHasMinimalRecall) {
  const std::int64_t n = 1000;
  Rng rng(7);
  const auto real = gaussian_set(n, 8, rng);
  std::vector<double> copies;
  for (std::int64_t i = 0; i < n; ++i) copies.insert(copies.end(), real.row(0).begin(), real.row(0).end());
  const FeatureSet gen(n, 8, std::move(copies));
  const auto start = std::chrono::steady_clock::now();
  const auto pr = knn_precision_recall(real, gen, 3);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LE(pr.recall, 1.0 / static_cast<double>(n));
  EXPECT_EQ(pr.precision, 1.0);
  EXPECT_LT(secs, 10.0);
}

TEST(KnnTest, RejectsLargeK) {
  Rng rng(8);
  const auto a = gaussian_set(4, 2, rng);
  EXPECT_THROW(knn_precision_recall(a, a, 4), UsageError);
  EXPECT_THROW(build_manifold(a, 0), UsageError);
}

TEST(DiversityTest, MeanPairwiseDistance) {
  const FeatureSet three(3, 1, {0, 3, 4});
  EXPECT_DOUBLE_EQ(mean_pairwise_distance(three), (3.0 + 4.0 + 1.0) / 3.0);
  EXPECT_EQ(mean_pairwise_distance(FeatureSet(1, 2, {1, 2})), 0.0);
}

// Items are raw 2-D feature vectors and the extractor is the identity.
ItemSet gaussian_items(std::int64_t n, Rng& rng) {
  ItemSet s{2, {}};
  for (std::int64_t i = 0; i < 2 * n; ++i) s.data.push_back(static_cast<float>(rng.normal()));
  return s;
}

FeatureSet identity_features(const ItemSet& items) {
  std::vector<double> v(items.data.begin(), items.data.end());
  return FeatureSet(items.count(), items.item_size, std::move(v), "identity");
}

TEST(FewShotTest, StubSamplerProtocol) {
  Rng rng(9);
  const auto test = gaussian_items(60, rng);
  FewShotConfig cfg;
  cfg.n = 40;
  cfg.k = 4;
  cfg.seed = 3;
  std::vector<std::int64_t> seen;
  // Copies the conditioning item with seeded jitter.
  const SamplerFn sampler = [&](std::int64_t idx, std::int64_t count, std::uint64_t seed) {
    seen.push_back(idx);
    EXPECT_LT(idx, cfg.n);
    Rng r(seed);
    ItemSet out{2, {}};
    for (std::int64_t i = 0; i < count; ++i) {
      for (int c = 0; c < 2; ++c) out.data.push_back(test.item(idx)[c] + 0.01f * static_cast<float>(r.normal()));
    }
    return out;
  };
  const auto result = fewshot_run(cfg, test, sampler, identity_features);
  EXPECT_EQ(result.conditions.size(), 4u);
  EXPECT_EQ(seen, result.conditions);
  std::vector<std::int64_t> sorted = seen;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
  EXPECT_EQ(result.samples.count(), 40);
  // Jitter-only samples: tiny diversity, recall limited to the neighbourhoods of 4 items.
  EXPECT_LT(result.report.diversity, 0.05);
  EXPECT_LT(result.report.recall, 0.5);
  EXPECT_EQ(result.report.config.get_int("samples_per_condition"), 10);
  // Determinism.
  seen.clear();
  EXPECT_EQ(fewshot_evaluate(cfg, test, sampler, identity_features), result.report);
}

TEST(FewShotTest, MatchedDistributionScoresWell) {
  Rng rng(10);
  const auto test = gaussian_items(400, rng);
  FewShotConfig cfg;
  cfg.n = 400;
  cfg.k = 10;
  const SamplerFn sampler = [](std::int64_t, std::int64_t count, std::uint64_t seed) {
    Rng r(seed);
    return gaussian_items(count, r);
  };
  const auto report = fewshot_evaluate(cfg, test, sampler, identity_features);
  EXPECT_LT(report.fid, 0.1);
  EXPECT_GT(report.precision, 0.8);
  EXPECT_GT(report.recall, 0.8);
}

TEST(FewShotTest, ValidatesConfigAndSampler) {
  Rng rng(11);
  const auto test = gaussian_items(20, rng);
  FewShotConfig cfg;
  cfg.n = 20;
  cfg.k = 3;
  const SamplerFn ok = [](std::int64_t, std::int64_t count, std::uint64_t seed) {
    Rng r(seed);
    return gaussian_items(count, r);
  };
  EXPECT_THROW(fewshot_run(cfg, test, ok, identity_features), UsageError);
  cfg.k = 4;
  cfg.n = 40;
  EXPECT_THROW(fewshot_run(cfg, test, ok, identity_features), DataError);
  cfg.n = 20;
  const SamplerFn short_sampler = [](std::int64_t, std::int64_t count, std::uint64_t seed) {
    Rng r(seed);
    return gaussian_items(count - 1, r);
  };
  EXPECT_THROW(fewshot_run(cfg, test, short_sampler, identity_features), NumericalError);
}

TEST(FewShotTest, SweepCsvLayout) {
  Rng rng(12);
  const auto test = gaussian_items(40, rng);
  FewShotConfig cfg;
  cfg.n = 40;
  cfg.k = 4;
  const auto factory = [](double g) -> SamplerFn {
    return [g](std::int64_t, std::int64_t count, std::uint64_t seed) {
      Rng r(seed);
      auto s = gaussian_items(count, r);
      for (auto& v : s.data) v *= static_cast<float>(1.0 / (1.0 + g));
      return s;
    };
  };
  const std::vector<double> gs{0.0, 1.0};
  const auto rows = guidance_sweep(cfg, test, factory, identity_features, gs);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].report.config.get_double("guidance"), 1.0);
  EXPECT_LT(rows[1].report.diversity, rows[0].report.diversity);
  const auto csv = sweep_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "g,fid,precision,recall,diversity");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

}  // namespace
}  // namespace semvar::metrics
