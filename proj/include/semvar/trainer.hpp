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

#ifndef SEMVAR_TRAINER_HPP_
#define SEMVAR_TRAINER_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "semvar/checkpoint.hpp"
#include "semvar/config.hpp"
#include "semvar/denoiser.hpp"
#include "semvar/diffusion.hpp"
#include "semvar/episodic.hpp"

namespace semvar::train {

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-12;
};

// Defaults are the large-scale recipe (Adam 2e-4, betas 0.9/0.99, eps 1e-12,
// EMA 0.9999, batch 2048 would be the full setting); desk-scale runs override
// batch size, step count, learning rate and EMA decay from their config.
struct TrainConfig {
  AdamConfig adam;
  double ema_decay = 0.9999;
  std::int64_t batch_size = 64;
  std::int64_t num_steps = 2000;
  double context_dropout = 0.1;
  std::uint64_t seed = 0;
  data::PairMode objective = data::PairMode::kPair;
  std::int64_t checkpoint_every = 500;

  void validate() const;
  Config to_config() const;
  static TrainConfig from_config(const Config& cfg);
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t step = 0;
};

// One bias-corrected Adam update of a single tensor at 1-based step `step`:
// theta -= lr * m_hat / (sqrt(v_hat) + eps).
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                 std::int64_t step, const AdamConfig& cfg);

// Applies adam_update to every parameter using its accumulated gradient.
// Throws NumericalError (before touching any parameter) if a gradient is
// non-finite.
template <typename T>
void adam_step(nn::ParameterSet<T>& params, AdamState<T>& state, const AdamConfig& cfg);

// ema <- decay * ema + (1 - decay) * value
template <typename T>
void ema_update(std::span<T> ema, std::span<const T> value, double decay);
template <typename T>
void ema_update(nn::ParameterSet<T>& ema, const nn::ParameterSet<T>& params, double decay);

struct TrainResult {
  std::int64_t steps = 0;
  std::vector<double> losses;  // one per executed step
  Checkpoint checkpoint;
};

// Optimization loop. Each step: draw a batch, drop contexts, evaluate the
// diffusion loss, backpropagate, Adam, EMA. Randomness comes from separate
// streams for timesteps, noise and dropout (the batch iterator owns data
// order), all restored on resume.
class Trainer {
 public:
  // `extra` is echoed into every checkpoint (encoder spec, data paths, ...).
  Trainer(model::DenoiserConfig model_cfg, TrainConfig train_cfg, diffusion::ScheduleConfig schedule,
          Config extra = {});

  // Restores parameters, averages, optimizer moments, step counter and rng
  // streams, and repositions `data`.
  void resume(const Checkpoint& ck, data::BatchIterator& data);

  // Runs until num_steps total steps. Writes <out>/loss.csv (step,loss),
  // <out>/timing.csv (step,wall_time) and <out>/checkpoint.semc every
  // checkpoint_every steps and at the end. A non-finite loss or gradient
  // throws NumericalError and leaves the last checkpoint in place.
  TrainResult run(data::BatchIterator& data, const std::filesystem::path& out_dir);

  Checkpoint make_checkpoint(const data::BatchIterator& data) const;

  const model::Denoiser& model() const { return model_; }
  const nn::ParameterSet<float>& ema() const { return ema_; }
  std::int64_t step() const { return adam_.step; }

 private:
  model::DenoiserConfig model_cfg_;
  TrainConfig cfg_;
  diffusion::ScheduleConfig schedule_;
  Config extra_;
  model::Denoiser model_;
  nn::ParameterSet<float> ema_;
  AdamState<float> adam_;
  Rng time_rng_;
  Rng noise_rng_;
  Rng dropout_rng_;
};

TrainResult train(const model::DenoiserConfig& model_cfg, const TrainConfig& train_cfg,
                  const diffusion::ScheduleConfig& schedule, data::BatchIterator& data,
                  const std::filesystem::path& out_dir, const Config& extra = {});

// Rebuilds a denoiser from a checkpoint, taking the averaged ("ema/")
// parameters when use_ema is set.
model::Denoiser load_denoiser(const Checkpoint& ck, bool use_ema = true);
diffusion::ScheduleConfig schedule_from_config(const Config& cfg);
Config schedule_to_config(const diffusion::ScheduleConfig& s);

}  // namespace semvar::train

#endif  // SEMVAR_TRAINER_HPP_
