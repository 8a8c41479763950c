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

#ifndef SEMVAR_DIFFUSION_HPP_
#define SEMVAR_DIFFUSION_HPP_

#include <cstdint>
#include <functional>
#include <vector>

#include "semvar/random.hpp"
#include "semvar/tensor.hpp"

namespace semvar::diffusion {

// One point of the variance-preserving forward process
// z_t = alpha_t x + sigma_t eps.
struct SchedulePoint {
  double t = 0.0;
  double alpha = 1.0;
  double sigma = 0.0;
  double log_snr = 0.0;  // ln(alpha^2 / sigma^2)

  double snr() const { return (alpha * alpha) / (sigma * sigma); }
};

// Cosine schedule whose log-SNR is shifted by 2 ln(base / image) so that an
// image of `image_resolution` sees the same noise level per unit of content
// as a `base_resolution` image under the plain cosine schedule.
struct ScheduleConfig {
  int base_resolution = 32;
  int image_resolution = 16;
  double t_min = 1e-4;
  double t_max = 1.0 - 1e-4;

  void validate() const;
  double log_snr_shift() const;
};

// Unshifted cosine log-SNR, -2 ln tan(pi t / 2).
double cosine_log_snr(double t);

// Throws UsageError when t lies outside [t_min, t_max].
SchedulePoint schedule_at(const ScheduleConfig& cfg, double t);

struct SamplerConfig {
  int num_steps = 50;
  double variance_interp = 0.2;  // eta: 1 = posterior stddev, 0 = transition stddev
  double guidance = 0.0;
  bool final_step_noise = false;

  void validate() const;
};

enum class LossSpace { kEpsilon, kX };

// Network predicts v; the loss is measured on epsilon (equivalently
// SNR(t)-weighted x residuals).
struct LossConfig {
  LossSpace space = LossSpace::kEpsilon;
};

template <typename T>
BasicTensor<T> forward_diffuse(const BasicTensor<T>& x, const SchedulePoint& sp,
                               const BasicTensor<T>& eps);

// v = alpha eps - sigma x
template <typename T>
BasicTensor<T> v_target(const BasicTensor<T>& x, const BasicTensor<T>& eps, const SchedulePoint& sp);

template <typename T>
struct Predictions {
  BasicTensor<T> x;    // alpha z - sigma v
  BasicTensor<T> eps;  // sigma z + alpha v
};

template <typename T>
Predictions<T> predictions_from_v(const BasicTensor<T>& z, const BasicTensor<T>& v,
                                  const SchedulePoint& sp);

// Maps a noised batch [B, ...] and per-item times to a v prediction of the
// same shape. Conditioning is bound by the caller.
template <typename T>
using DenoiseFn =
    std::function<BasicTensor<T>(const BasicTensor<T>& z, const std::vector<double>& t)>;

// Loss for fixed times (one per batch item) and noise; differentiable in the
// model output. Returns mean over all elements of (eps - eps_hat)^2 for
// LossSpace::kEpsilon, or of (x - x_hat)^2 for kX.
template <typename T>
BasicTensor<T> diffusion_loss_at(const BasicTensor<T>& x, const std::vector<double>& t,
                                 const BasicTensor<T>& eps, const DenoiseFn<T>& model,
                                 const ScheduleConfig& schedule, const LossConfig& loss = {});

// Draws t ~ U(t_min, t_max) per item from `time_rng` and eps ~ N(0, I) from
// `noise_rng`, then evaluates diffusion_loss_at. Throws NumericalError on a
// non-finite loss.
template <typename T>
BasicTensor<T> diffusion_loss(const BasicTensor<T>& x, const DenoiseFn<T>& model,
                              const ScheduleConfig& schedule, Rng& time_rng, Rng& noise_rng,
                              const LossConfig& loss = {});

// Coefficients of one ancestral step from t down to s < t.
struct StepCoefficients {
  double alpha_ts = 0.0;       // alpha_t / alpha_s
  double sigma_ts = 0.0;       // transition stddev sigma_{t|s}
  double posterior_std = 0.0;  // sigma_{t|s} sigma_s / sigma_t
  double mean_z = 0.0;         // weight of z_t in the posterior mean
  double mean_x = 0.0;         // weight of x_hat in the posterior mean
  double noise_std = 0.0;      // posterior_std^eta * sigma_ts^(1 - eta)
};

StepCoefficients step_coefficients(const SchedulePoint& sp_t, const SchedulePoint& sp_s, double eta);

// z_s = mean_z z_t + mean_x x_hat + noise_std * n, n ~ N(0, I); the noise
// term is skipped when add_noise is false.
template <typename T>
BasicTensor<T> ddpm_step(const BasicTensor<T>& z_t, const BasicTensor<T>& v_hat,
                         const SchedulePoint& sp_t, const SchedulePoint& sp_s,
                         const SamplerConfig& cfg, Rng& rng, bool add_noise = true);

// v_cond + g (v_cond - v_uncond)
template <typename T>
BasicTensor<T> guided_v(const BasicTensor<T>& v_cond, const BasicTensor<T>& v_uncond, double g);

// Ancestral sampling over the uniform grid t = 1, 1 - 1/N, ..., 0 (clipped to
// the schedule's range). With guidance > 0 both `cond` and `uncond` run at
// every step; `uncond` may be empty when guidance is 0.
template <typename T>
BasicTensor<T> sample(const DenoiseFn<T>& cond, const DenoiseFn<T>& uncond,
                      const SamplerConfig& cfg, const ScheduleConfig& schedule, const Shape& shape,
                      Rng& rng);

}  // namespace semvar::diffusion

#endif  // SEMVAR_DIFFUSION_HPP_
