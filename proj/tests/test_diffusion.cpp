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
#include <numbers>

#include "gradcheck.hpp"
#include "semvar/diffusion.hpp"
#include "semvar/errors.hpp"

namespace semvar::diffusion {
namespace {

using testing::random_tensor;

ScheduleConfig schedule_for(int resolution) {
  ScheduleConfig cfg;
  cfg.image_resolution = resolution;
  return cfg;
}

TEST(ScheduleTest, MidpointWithoutShift) {
  const auto sp = schedule_at(schedule_for(32), 0.5);
  EXPECT_NEAR(sp.log_snr, 0.0, 1e-12);
  EXPECT_NEAR(sp.alpha, std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(sp.sigma, std::sqrt(0.5), 1e-12);
}

TEST(ScheduleTest, HalfResolutionShift) {
  EXPECT_NEAR(schedule_for(16).log_snr_shift(), 2.0 * std::log(2.0), 1e-12);
  EXPECT_NEAR(schedule_at(schedule_for(16), 0.5).log_snr, 1.3862943611198906, 1e-9);
  // Plain cosine oracle: alpha = cos(pi t / 2), sigma = sin(pi t / 2).
  const double t = 0.3;
  const double c = std::cos(std::numbers::pi * t / 2), s = std::sin(std::numbers::pi * t / 2);
  EXPECT_NEAR(schedule_at(schedule_for(32), t).alpha, c, 1e-12);
  EXPECT_NEAR(schedule_at(schedule_for(32), t).sigma, s, 1e-12);
  EXPECT_NEAR(cosine_log_snr(t), std::log(c * c / (s * s)), 1e-12);
}

TEST(ScheduleTest, VariancePreservingAndMonotoneOnGrid) {
  for (int res : {8, 16, 32, 64}) {
    const auto cfg = schedule_for(res);
    double prev = INFINITY;
    for (int i = 0; i < 1000; ++i) {
      const double t = cfg.t_min + (cfg.t_max - cfg.t_min) * i / 999.0;
      const auto sp = schedule_at(cfg, t);
      EXPECT_LT(std::abs(sp.alpha * sp.alpha + sp.sigma * sp.sigma - 1.0), 1e-6);
      EXPECT_LT(sp.log_snr, prev);
      EXPECT_NEAR(sp.log_snr, std::log(sp.snr()), 1e-8 * std::max(1.0, std::abs(sp.log_snr)));
      prev = sp.log_snr;
    }
  }
}

TEST(ScheduleTest, RejectsOutOfRange) {
  const auto cfg = schedule_for(16);
  EXPECT_THROW(schedule_at(cfg, 0.0), UsageError);
  EXPECT_THROW(schedule_at(cfg, 1.0), UsageError);
  ScheduleConfig bad;
  bad.image_resolution = 0;
  EXPECT_THROW(bad.validate(), UsageError);
}

TEST(ForwardTest, Examples) {
  const auto sp = schedule_at(schedule_for(16), 0.4);
  const auto x = Tensor64::vector({0.5, -1.0});
  const auto z0 = forward_diffuse(x, sp, Tensor64(Shape{2}, 0.0));
  EXPECT_DOUBLE_EQ(z0[0], sp.alpha * 0.5);
  const auto end = schedule_at(schedule_for(16), 1.0 - 1e-4);
  const auto eps = Tensor64::vector({0.3, 0.7});
  const auto z1 = forward_diffuse(x, end, eps);
  EXPECT_NEAR(z1[0], 0.3, 1e-3);
  EXPECT_NEAR(z1[1], 0.7, 1e-3);
  EXPECT_THROW(forward_diffuse(x, sp, Tensor64(Shape{3}, 0.0)), UsageError);
}

TEST(ForwardTest, MonteCarloVariance) {
  const auto sp = schedule_at(schedule_for(16), 0.6);
  const int n = 10000;
  Rng rng(3);
  // x ~ U(-1, 1) so Var(x) = 1/3.
  std::vector<double> xs(n), es(n);
  for (int i = 0; i < n; ++i) {
    xs[i] = rng.uniform(-1.0, 1.0);
    es[i] = rng.normal();
  }
  const auto z = forward_diffuse(Tensor64(Shape{n}, xs), sp, Tensor64(Shape{n}, es));
  double m = 0, m2 = 0, m4 = 0;
  for (double v : z.data()) m += v;
  m /= n;
  for (double v : z.data()) {
    m2 += (v - m) * (v - m);
    m4 += std::pow(v - m, 4);
  }
  const double var = m2 / (n - 1);
  const double se = std::sqrt((m4 / n - var * var) / n);
  const double expected = sp.alpha * sp.alpha / 3.0 + sp.sigma * sp.sigma;
  EXPECT_LT(std::abs(var - expected), 3.0 * se);
}

TEST(ParameterizationTest, RoundTrip) {
  Rng rng(4);
  for (double t : {0.01, 0.3, 0.5, 0.9, 0.999}) {
    const auto sp = schedule_at(schedule_for(16), t);
    const auto x = random_tensor<double>({4, 5}, rng);
    const auto eps = random_tensor<double>({4, 5}, rng);
    const auto p = predictions_from_v(forward_diffuse(x, sp, eps), v_target(x, eps, sp), sp);
    for (int i = 0; i < 20; ++i) {
      EXPECT_NEAR(p.x[i], x[i], 1e-12);
      EXPECT_NEAR(p.eps[i], eps[i], 1e-12);
    }
  }
}

TEST(ParameterizationTest, Limits) {
  const auto x = Tensor64::vector({2.0});
  const auto eps = Tensor64::vector({-0.5});
  SchedulePoint clean{0.0, 1.0, 0.0, INFINITY};
  SchedulePoint noise{1.0, 0.0, 1.0, -INFINITY};
  EXPECT_EQ(v_target(x, eps, clean)[0], -0.5);
  EXPECT_EQ(v_target(x, eps, noise)[0], -2.0);
}

DenoiseFn<double> constant_model(const Tensor64& v) {
  return [v](const Tensor64&, const std::vector<double>&) { return v; };
}

TEST(LossTest, OracleModelHasZeroLoss) {
  const auto cfg = schedule_for(16);
  Rng rng(5);
  const auto x = random_tensor<double>({3, 4}, rng);
  const auto eps = random_tensor<double>({3, 4}, rng);
  const std::vector<double> t{0.2, 0.5, 0.8};
  DenoiseFn<double> oracle = [&](const Tensor64&, const std::vector<double>& times) {
    std::vector<double> out;
    for (int b = 0; b < 3; ++b) {
      const auto sp = schedule_at(cfg, times[b]);
      for (int j = 0; j < 4; ++j) out.push_back(sp.alpha * eps[b * 4 + j] - sp.sigma * x[b * 4 + j]);
    }
    return Tensor64(Shape{3, 4}, out);
  };
  EXPECT_NEAR(diffusion_loss_at(x, t, eps, oracle, cfg).item(), 0.0, 1e-24);
}

TEST(LossTest, ZeroPredictionOnOnePixel) {
  // v_hat = 0 gives eps_hat = sigma z = sigma (alpha x + sigma eps), so the loss
  // is (eps (1 - sigma^2) - alpha sigma x)^2 = alpha^2 (alpha eps - sigma x)^2.
  const auto cfg = schedule_for(16);
  const double x = 0.7, e = -1.3, t = 0.35;
  const auto sp = schedule_at(cfg, t);
  const double expected = std::pow(sp.alpha, 2) * std::pow(sp.alpha * e - sp.sigma * x, 2);
  const auto loss = diffusion_loss_at(Tensor64(Shape{1, 1}, x), {t}, Tensor64(Shape{1, 1}, e),
                                      constant_model(Tensor64(Shape{1, 1}, 0.0)), cfg);
  EXPECT_NEAR(loss.item(), expected, 1e-14);
}

TEST(LossTest, EpsilonSpaceEqualsSnrWeightedXSpace) {
  const auto cfg = schedule_for(16);
  Rng rng(6);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double t = rng.uniform(cfg.t_min, cfg.t_max);
    const auto x = random_tensor<double>({1, 8}, rng);
    const auto eps = random_tensor<double>({1, 8}, rng);
    const auto v_hat = random_tensor<double>({1, 8}, rng, 2.0);
    LossConfig xs;
    xs.space = LossSpace::kX;
    const double le = diffusion_loss_at(x, {t}, eps, constant_model(v_hat), cfg).item();
    const double lx = diffusion_loss_at(x, {t}, eps, constant_model(v_hat), cfg, xs).item();
    const double snr = schedule_at(cfg, t).snr();
    worst = std::max(worst, std::abs(snr * lx - le) / std::max(le, 1e-300));
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(LossTest, RandomTimesComeFromStreams) {
  const auto cfg = schedule_for(16);
  Rng rng(7);
  const auto x = random_tensor<double>({2, 3}, rng);
  const auto model = constant_model(Tensor64(Shape{2, 3}, 0.1));
  Rng ta(1), na(2), tb(1), nb(2);
  EXPECT_EQ(diffusion_loss(x, model, cfg, ta, na).item(), diffusion_loss(x, model, cfg, tb, nb).item());
  const auto bad = constant_model(Tensor64(Shape{2, 3}, NAN));
  EXPECT_THROW(diffusion_loss(x, bad, cfg, ta, na), NumericalError);
}

TEST(LossTest, GradientReachesModelOutput) {
  const auto cfg = schedule_for(16);
  Rng rng(8);
  const auto x = random_tensor<double>({2, 3}, rng);
  const auto eps = random_tensor<double>({2, 3}, rng);
  std::vector<Tensor64> in{random_tensor<double>({2, 3}, rng)};
  const double err = testing::gradcheck(
      [&](auto& v) { return diffusion_loss_at(x, {0.3, 0.7}, eps, constant_model(v[0]), cfg); }, in, 1e-5);
  EXPECT_LT(err, 1e-5);
}

TEST(SamplerTest, InterpolationEndpoints) {
  const auto cfg = schedule_for(16);
  const auto sp_t = schedule_at(cfg, 0.6), sp_s = schedule_at(cfg, 0.4);
  // Independent derivation of the transition and posterior stddevs.
  const double a_ts = sp_t.alpha / sp_s.alpha;
  const double s_ts = std::sqrt(sp_t.sigma * sp_t.sigma - a_ts * a_ts * sp_s.sigma * sp_s.sigma);
  const double post = s_ts * sp_s.sigma / sp_t.sigma;
  EXPECT_EQ(step_coefficients(sp_t, sp_s, 1.0).noise_std, step_coefficients(sp_t, sp_s, 1.0).posterior_std);
  EXPECT_EQ(step_coefficients(sp_t, sp_s, 0.0).noise_std, step_coefficients(sp_t, sp_s, 0.0).sigma_ts);
  EXPECT_NEAR(step_coefficients(sp_t, sp_s, 1.0).noise_std, post, 1e-14);
  EXPECT_NEAR(step_coefficients(sp_t, sp_s, 0.0).noise_std, s_ts, 1e-14);
  const auto c = step_coefficients(sp_t, sp_s, 0.2);
  EXPECT_NEAR(c.noise_std, std::exp(0.2 * std::log(post) + 0.8 * std::log(s_ts)), 1e-12);
  EXPECT_NEAR(c.mean_z, a_ts * sp_s.sigma * sp_s.sigma / (sp_t.sigma * sp_t.sigma), 1e-14);
  EXPECT_NEAR(c.mean_x, sp_s.alpha * s_ts * s_ts / (sp_t.sigma * sp_t.sigma), 1e-14);
}

TEST(SamplerTest, InterpolationWorkedExample) {
  EXPECT_NEAR(std::pow(0.1, 0.2) * std::pow(0.3, 0.8), 0.2408, 5e-5);
  // Schedule points with posterior stddev 0.1 and transition stddev 0.3.
  const double s_ts = 0.3, post = 0.1;
  // sigma_t^2 = s_ts^2 + a_ts^2 sigma_s^2 and post = s_ts sigma_s / sigma_t; solve with a_ts = 1.
  // post^2 (s_ts^2 + q) = s_ts^2 q  =>  q = post^2 s_ts^2 / (s_ts^2 - post^2).
  const double q = post * post * s_ts * s_ts / (s_ts * s_ts - post * post);
  SchedulePoint sp_s{0.4, 1.0, std::sqrt(q), 0.0};
  SchedulePoint sp_t{0.6, 1.0, std::sqrt(s_ts * s_ts + q), 0.0};
  const auto c = step_coefficients(sp_t, sp_s, 0.2);
  EXPECT_NEAR(c.sigma_ts, 0.3, 1e-12);
  EXPECT_NEAR(c.posterior_std, 0.1, 1e-12);
  EXPECT_NEAR(c.noise_std, std::pow(0.1, 0.2) * std::pow(0.3, 0.8), 1e-12);
}

TEST(SamplerTest, StepRejectsBadInputs) {
  const auto cfg = schedule_for(16);
  const auto a = schedule_at(cfg, 0.6), b = schedule_at(cfg, 0.4);
  SamplerConfig sc;
  Rng rng(1);
  const auto z = Tensor64::vector({0.1});
  EXPECT_THROW(ddpm_step(z, z, b, a, sc, rng), UsageError);
  sc.variance_interp = 1.5;
  EXPECT_THROW(ddpm_step(z, z, a, b, sc, rng), UsageError);
  SamplerConfig zero;
  zero.num_steps = 0;
  EXPECT_THROW(zero.validate(), UsageError);
}

TEST(SamplerTest, StepNoiseMatchesStddev) {
  const auto cfg = schedule_for(16);
  const auto sp_t = schedule_at(cfg, 0.7), sp_s = schedule_at(cfg, 0.5);
  SamplerConfig sc;
  const int n = 20000;
  const Tensor64 z(Shape{n}, 0.4), v(Shape{n}, -0.2);
  Rng rng(9);
  const auto a = ddpm_step(z, v, sp_t, sp_s, sc, rng, true);
  const auto mean = ddpm_step(z, v, sp_t, sp_s, sc, rng, false);
  double s2 = 0.0;
  for (int i = 0; i < n; ++i) s2 += std::pow(a[i] - mean[i], 2);
  const double sd = std::sqrt(s2 / n);
  const double expected = step_coefficients(sp_t, sp_s, 0.2).noise_std;
  EXPECT_NEAR(sd, expected, 4.0 * expected / std::sqrt(2.0 * n));
}

TEST(GuidanceTest, Examples) {
  const auto vc = Tensor64::vector({1.0}), vu = Tensor64::vector({0.0});
  EXPECT_EQ(guided_v(vc, vu, 0.0)[0], 1.0);
  EXPECT_EQ(guided_v(vc, vc, 3.0)[0], 1.0);
  EXPECT_EQ(guided_v(vc, vu, 0.5)[0], 1.5);
  EXPECT_THROW(guided_v(vc, vu, -1.0), UsageError);
}

TEST(SampleTest, SingleStepOracleDenoisesExactly) {
  const auto cfg = schedule_for(16);
  const auto x = Tensor64(Shape{2, 3}, std::vector<double>{0.5, -0.25, 0.9, -1, 0, 0.3});
  DenoiseFn<double> oracle = [&](const Tensor64& z, const std::vector<double>& t) {
    const auto sp = schedule_at(cfg, t[0]);
    std::vector<double> v(6);
    for (int i = 0; i < 6; ++i) {
      const double e = (z[i] - sp.alpha * x[i]) / sp.sigma;
      v[i] = sp.alpha * e - sp.sigma * x[i];
    }
    return Tensor64(Shape{2, 3}, v);
  };
  SamplerConfig sc;
  sc.num_steps = 1;
  Rng rng(10);
  const auto out = sample<double>(oracle, {}, sc, cfg, {2, 3}, rng);
  // Closed form: posterior mean at t_min from the initial draw and the exact x.
  Rng replay(10);
  const auto sp_t = schedule_at(cfg, cfg.t_max), sp_s = schedule_at(cfg, cfg.t_min);
  const auto c = step_coefficients(sp_t, sp_s, sc.variance_interp);
  for (int i = 0; i < 6; ++i) {
    const double z0 = replay.normal();
    EXPECT_NEAR(out[i], c.mean_z * z0 + c.mean_x * x[i], 1e-12);
    EXPECT_NEAR(out[i], x[i], 1e-6);
  }
}

TEST(SampleTest, DeterministicAndShaped) {
  const auto cfg = schedule_for(16);
  DenoiseFn<float> cond = [](const Tensor& z, const std::vector<double>&) { return scale(z, 0.5f); };
  DenoiseFn<float> uncond = [](const Tensor& z, const std::vector<double>&) { return scale(z, -0.5f); };
  SamplerConfig sc;
  sc.num_steps = 7;
  sc.guidance = 0.5;
  Rng a(11), b(11);
  const auto s1 = sample(cond, uncond, sc, cfg, {2, 1, 4, 4}, a);
  const auto s2 = sample(cond, uncond, sc, cfg, {2, 1, 4, 4}, b);
  EXPECT_EQ(s1.shape(), (Shape{2, 1, 4, 4}));
  EXPECT_TRUE(std::equal(s1.data().begin(), s1.data().end(), s2.data().begin()));
  EXPECT_THROW(sample<float>(cond, {}, sc, cfg, {1, 4}, a), UsageError);
}

TEST(SampleTest, GuidanceCallsBothModels) {
  const auto cfg = schedule_for(16);
  int nc = 0, nu = 0;
  DenoiseFn<double> cond = [&](const Tensor64& z, const std::vector<double>&) { ++nc; return z; };
  DenoiseFn<double> uncond = [&](const Tensor64& z, const std::vector<double>&) { ++nu; return z; };
  SamplerConfig sc;
  sc.num_steps = 5;
  Rng rng(12);
  sample(cond, uncond, sc, cfg, {1, 2}, rng);
  EXPECT_EQ(nc, 5);
  EXPECT_EQ(nu, 0);
  sc.guidance = 1.0;
  sample(cond, uncond, sc, cfg, {1, 2}, rng);
  EXPECT_EQ(nc, 10);
  EXPECT_EQ(nu, 5);
}

}  // namespace
}  // namespace semvar::diffusion
