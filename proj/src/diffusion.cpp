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

#include "semvar/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "semvar/errors.hpp"

namespace semvar::diffusion {

namespace {

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

void check_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw UsageError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Per-item coefficient broadcastable against a [B, ...] batch.
template <typename T>
BasicTensor<T> per_item(const std::vector<double>& values, std::int64_t rank) {
  Shape shape(static_cast<std::size_t>(rank), 1);
  shape[0] = static_cast<std::int64_t>(values.size());
  return BasicTensor<T>(shape, std::vector<T>(values.begin(), values.end()));
}

template <typename T>
BasicTensor<T> axpby(const BasicTensor<T>& x, double a, const BasicTensor<T>& y, double b) {
  std::vector<T> out(x.data().size());
  const T* px = x.data().data();
  const T* py = y.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(a * px[i] + b * py[i]);
  return BasicTensor<T>(x.shape(), std::move(out));
}

}  // namespace

void ScheduleConfig::validate() const {
  if (base_resolution <= 0 || image_resolution <= 0) {
    throw UsageError("schedule resolutions must be positive");
  }
  if (!(t_min > 0.0 && t_min < t_max && t_max < 1.0)) {
    throw UsageError("schedule clip range must satisfy 0 < t_min < t_max < 1");
  }
}

double ScheduleConfig::log_snr_shift() const {
  return 2.0 * std::log(static_cast<double>(base_resolution) / image_resolution);
}

double cosine_log_snr(double t) { return -2.0 * std::log(std::tan(std::numbers::pi * t / 2.0)); }

SchedulePoint schedule_at(const ScheduleConfig& cfg, double t) {
  cfg.validate();
  if (!(t >= cfg.t_min && t <= cfg.t_max)) {
    throw UsageError("schedule_at: t=" + std::to_string(t) + " outside clipped range");
  }
  SchedulePoint sp;
  sp.t = t;
  sp.log_snr = cosine_log_snr(t) + cfg.log_snr_shift();
  sp.alpha = std::sqrt(sigmoid(sp.log_snr));
  sp.sigma = std::sqrt(sigmoid(-sp.log_snr));
  return sp;
}

void SamplerConfig::validate() const {
  if (num_steps < 1) throw UsageError("sampler needs at least one step");
  if (!(variance_interp >= 0.0 && variance_interp <= 1.0)) {
    throw UsageError("variance interpolation must lie in [0, 1]");
  }
  if (!(guidance >= 0.0)) throw UsageError("guidance must be >= 0");
}

template <typename T>
BasicTensor<T> forward_diffuse(const BasicTensor<T>& x, const SchedulePoint& sp,
                               const BasicTensor<T>& eps) {
  check_same_shape(x.shape(), eps.shape(), "forward_diffuse");
  return axpby(x, sp.alpha, eps, sp.sigma);
}

template <typename T>
BasicTensor<T> v_target(const BasicTensor<T>& x, const BasicTensor<T>& eps, const SchedulePoint& sp) {
  check_same_shape(x.shape(), eps.shape(), "v_target");
  return axpby(eps, sp.alpha, x, -sp.sigma);
}

template <typename T>
Predictions<T> predictions_from_v(const BasicTensor<T>& z, const BasicTensor<T>& v,
                                  const SchedulePoint& sp) {
  check_same_shape(z.shape(), v.shape(), "predictions_from_v");
  return {axpby(z, sp.alpha, v, -sp.sigma), axpby(z, sp.sigma, v, sp.alpha)};
}

template <typename T>
BasicTensor<T> diffusion_loss_at(const BasicTensor<T>& x, const std::vector<double>& t,
                                 const BasicTensor<T>& eps, const DenoiseFn<T>& model,
                                 const ScheduleConfig& schedule, const LossConfig& loss) {
  check_same_shape(x.shape(), eps.shape(), "diffusion_loss");
  if (x.rank() < 1 || static_cast<std::int64_t>(t.size()) != x.dim(0)) {
    throw UsageError("diffusion_loss: need one time per batch item");
  }
  std::vector<double> alpha(t.size()), sigma(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto sp = schedule_at(schedule, t[i]);
    alpha[i] = sp.alpha;
    sigma[i] = sp.sigma;
  }
  const auto a = per_item<T>(alpha, x.rank());
  const auto s = per_item<T>(sigma, x.rank());
  const auto z = add(mul(x, a), mul(eps, s));
  const auto v_hat = model(z, t);
  check_same_shape(v_hat.shape(), x.shape(), "model output");
  BasicTensor<T> residual;
  if (loss.space == LossSpace::kEpsilon) {
    // eps_hat = sigma z + alpha v_hat
    residual = sub(eps, add(mul(z, s), mul(v_hat, a)));
  } else {
    // x_hat = alpha z - sigma v_hat
    residual = sub(x, sub(mul(z, a), mul(v_hat, s)));
  }
  auto out = mean_all(mul(residual, residual));
  validate_finite(out, "diffusion loss");
  return out;
}

template <typename T>
BasicTensor<T> diffusion_loss(const BasicTensor<T>& x, const DenoiseFn<T>& model,
                              const ScheduleConfig& schedule, Rng& time_rng, Rng& noise_rng,
                              const LossConfig& loss) {
  std::vector<double> t(static_cast<std::size_t>(x.dim(0)));
  for (auto& ti : t) ti = time_rng.uniform(schedule.t_min, schedule.t_max);
  std::vector<T> noise(x.data().size());
  for (auto& n : noise) n = static_cast<T>(noise_rng.normal());
  return diffusion_loss_at(x, t, BasicTensor<T>(x.shape(), std::move(noise)), model, schedule, loss);
}

StepCoefficients step_coefficients(const SchedulePoint& sp_t, const SchedulePoint& sp_s, double eta) {
  if (!(sp_s.t < sp_t.t)) throw UsageError("ddpm_step: target time must precede current time");
  if (!(eta >= 0.0 && eta <= 1.0)) throw UsageError("ddpm_step: eta must lie in [0, 1]");
  StepCoefficients c;
  c.alpha_ts = sp_t.alpha / sp_s.alpha;
  const double var_t = sp_t.sigma * sp_t.sigma;
  const double var_ts = std::max(0.0, var_t - c.alpha_ts * c.alpha_ts * sp_s.sigma * sp_s.sigma);
  c.sigma_ts = std::sqrt(var_ts);
  c.posterior_std = c.sigma_ts * sp_s.sigma / sp_t.sigma;
  c.mean_z = c.alpha_ts * sp_s.sigma * sp_s.sigma / var_t;
  c.mean_x = sp_s.alpha * var_ts / var_t;
  c.noise_std = std::pow(c.posterior_std, eta) * std::pow(c.sigma_ts, 1.0 - eta);
  return c;
}

template <typename T>
BasicTensor<T> ddpm_step(const BasicTensor<T>& z_t, const BasicTensor<T>& v_hat,
                         const SchedulePoint& sp_t, const SchedulePoint& sp_s,
                         const SamplerConfig& cfg, Rng& rng, bool add_noise) {
  check_same_shape(z_t.shape(), v_hat.shape(), "ddpm_step");
  const auto c = step_coefficients(sp_t, sp_s, cfg.variance_interp);
  std::vector<T> out(z_t.data().size());
  const T* pz = z_t.data().data();
  const T* pv = v_hat.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x_hat = sp_t.alpha * pz[i] - sp_t.sigma * pv[i];
    double z = c.mean_z * pz[i] + c.mean_x * x_hat;
    if (add_noise) z += c.noise_std * rng.normal();
    out[i] = static_cast<T>(z);
  }
  return BasicTensor<T>(z_t.shape(), std::move(out));
}

template <typename T>
BasicTensor<T> guided_v(const BasicTensor<T>& v_cond, const BasicTensor<T>& v_uncond, double g) {
  check_same_shape(v_cond.shape(), v_uncond.shape(), "guided_v");
  if (!(g >= 0.0)) throw UsageError("guidance must be >= 0");
  return axpby(v_cond, 1.0 + g, v_uncond, -g);
}

template <typename T>
BasicTensor<T> sample(const DenoiseFn<T>& cond, const DenoiseFn<T>& uncond,
                      const SamplerConfig& cfg, const ScheduleConfig& schedule, const Shape& shape,
                      Rng& rng) {
  cfg.validate();
  schedule.validate();
  if (cfg.guidance > 0.0 && !uncond) {
    throw UsageError("sampling with guidance needs an unconditional model");
  }
  const std::int64_t batch = shape.at(0);
  std::vector<T> init(static_cast<std::size_t>(shape_size(shape)));
  for (auto& v : init) v = static_cast<T>(rng.normal());
  BasicTensor<T> z(shape, std::move(init));

  const int n = cfg.num_steps;
  auto grid = [&](int k) {
    return std::clamp(static_cast<double>(k) / n, schedule.t_min, schedule.t_max);
  };
  for (int k = n; k >= 1; --k) {
    const auto sp_t = schedule_at(schedule, grid(k));
    const auto sp_s = schedule_at(schedule, grid(k - 1));
    const std::vector<double> times(static_cast<std::size_t>(batch), sp_t.t);
    BasicTensor<T> v = cond(z, times);
    if (cfg.guidance > 0.0) v = guided_v(v, uncond(z, times), cfg.guidance);
    const bool last = k == 1;
    z = ddpm_step(z, v, sp_t, sp_s, cfg, rng, !last || cfg.final_step_noise);
  }
  return z;
}

#define SEMVAR_INSTANTIATE(T)                                                                    \
  template BasicTensor<T> forward_diffuse(const BasicTensor<T>&, const SchedulePoint&,           \
                                          const BasicTensor<T>&);                                \
  template BasicTensor<T> v_target(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                   const SchedulePoint&);                                        \
  template Predictions<T> predictions_from_v(const BasicTensor<T>&, const BasicTensor<T>&,       \
                                             const SchedulePoint&);                              \
  template BasicTensor<T> diffusion_loss_at(const BasicTensor<T>&, const std::vector<double>&,   \
                                            const BasicTensor<T>&, const DenoiseFn<T>&,          \
                                            const ScheduleConfig&, const LossConfig&);           \
  template BasicTensor<T> diffusion_loss(const BasicTensor<T>&, const DenoiseFn<T>&,             \
                                         const ScheduleConfig&, Rng&, Rng&, const LossConfig&);  \
  template BasicTensor<T> ddpm_step(const BasicTensor<T>&, const BasicTensor<T>&,                \
                                    const SchedulePoint&, const SchedulePoint&,                  \
                                    const SamplerConfig&, Rng&, bool);                           \
  template BasicTensor<T> guided_v(const BasicTensor<T>&, const BasicTensor<T>&, double);        \
  template BasicTensor<T> sample(const DenoiseFn<T>&, const DenoiseFn<T>&, const SamplerConfig&, \
                                 const ScheduleConfig&, const Shape&, Rng&);

SEMVAR_INSTANTIATE(float)
SEMVAR_INSTANTIATE(double)

#undef SEMVAR_INSTANTIATE

}  // namespace semvar::diffusion
