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

#include "semvar/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "semvar/errors.hpp"

namespace semvar::train {

void TrainConfig::validate() const {
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw UsageError("ema_decay must lie in (0, 1)");
  if (!(adam.beta1 > 0.0 && adam.beta1 < 1.0 && adam.beta2 > 0.0 && adam.beta2 < 1.0)) {
    throw UsageError("Adam betas must lie in (0, 1)");
  }
  if (!(adam.learning_rate > 0.0) || !(adam.eps >= 0.0)) throw UsageError("bad Adam learning rate / eps");
  if (batch_size < 1 || num_steps < 0) throw UsageError("bad batch size or step count");
  if (!(context_dropout >= 0.0 && context_dropout <= 1.0)) throw UsageError("bad context dropout");
  if (checkpoint_every < 1) throw UsageError("checkpoint_every must be positive");
}

Config TrainConfig::to_config() const {
  Config c;
  c.set("learning_rate", adam.learning_rate);
  c.set("beta1", adam.beta1);
  c.set("beta2", adam.beta2);
  c.set("adam_eps", adam.eps);
  c.set("ema_decay", ema_decay);
  c.set("batch_size", batch_size);
  c.set("num_steps", num_steps);
  c.set("context_dropout", context_dropout);
  c.set("seed", seed);
  c.set("objective", data::to_string(objective));
  c.set("checkpoint_every", checkpoint_every);
  return c;
}

TrainConfig TrainConfig::from_config(const Config& cfg) {
  TrainConfig t;
  t.adam.learning_rate = cfg.get_double("learning_rate", t.adam.learning_rate);
  t.adam.beta1 = cfg.get_double("beta1", t.adam.beta1);
  t.adam.beta2 = cfg.get_double("beta2", t.adam.beta2);
  t.adam.eps = cfg.get_double("adam_eps", t.adam.eps);
  t.ema_decay = cfg.get_double("ema_decay", t.ema_decay);
  t.batch_size = cfg.get_int("batch_size", t.batch_size);
  t.num_steps = cfg.get_int("num_steps", t.num_steps);
  t.context_dropout = cfg.get_double("context_dropout", t.context_dropout);
  t.seed = cfg.get_u64("seed", t.seed);
  t.objective = data::pair_mode_from_string(cfg.get_string("objective", data::to_string(t.objective)));
  t.checkpoint_every = cfg.get_int("checkpoint_every", t.checkpoint_every);
  t.validate();
  return t;
}

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                 std::int64_t step, const AdamConfig& cfg) {
  if (param.size() != grad.size() || param.size() != m.size() || param.size() != v.size()) {
    throw UsageError("adam_update: size mismatch");
  }
  if (step < 1) throw UsageError("adam_update: steps are 1-based");
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, double(step));
  const double c2 = 1.0 - std::pow(b2, double(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double mi = b1 * m[i] + (1.0 - b1) * g;
    const double vi = b2 * v[i] + (1.0 - b2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double m_hat = mi / c1;
    const double v_hat = vi / c2;
    param[i] = static_cast<T>(param[i] - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps));
  }
}

template <typename T>
void adam_step(nn::ParameterSet<T>& params, AdamState<T>& state, const AdamConfig& cfg) {
  auto& entries = params.entries();
  if (state.m.size() != entries.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& [name, t] : entries) {
      state.m.emplace_back(static_cast<std::size_t>(t.size()), T(0));
      state.v.emplace_back(static_cast<std::size_t>(t.size()), T(0));
    }
  }
  for (auto& [name, t] : entries) {
    if (t.has_grad()) validate_finite<T>(t.mutable_grad(), "gradient of " + name);
  }
  ++state.step;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& t = entries[i].second;
    if (!t.has_grad()) continue;  // untouched, moments included
    adam_update<T>(t.mutable_data(), t.mutable_grad(), state.m[i], state.v[i], state.step, cfg);
  }
}

template <typename T>
void ema_update(std::span<T> ema, std::span<const T> value, double decay) {
  if (ema.size() != value.size()) throw UsageError("ema_update: size mismatch");
  for (std::size_t i = 0; i < ema.size(); ++i) {
    ema[i] = static_cast<T>(decay * ema[i] + (1.0 - decay) * value[i]);
  }
}

template <typename T>
void ema_update(nn::ParameterSet<T>& ema, const nn::ParameterSet<T>& params, double decay) {
  if (ema.size() != params.size()) throw UsageError("ema_update: parameter sets differ");
  for (std::size_t i = 0; i < ema.size(); ++i) {
    ema_update<T>(ema.entries()[i].second.mutable_data(), params.entries()[i].second.data(), decay);
  }
}

template void adam_update<float>(std::span<float>, std::span<const float>, std::span<float>,
                                 std::span<float>, std::int64_t, const AdamConfig&);
template void adam_update<double>(std::span<double>, std::span<const double>, std::span<double>,
                                  std::span<double>, std::int64_t, const AdamConfig&);
template void adam_step<float>(nn::ParameterSet<float>&, AdamState<float>&, const AdamConfig&);
template void adam_step<double>(nn::ParameterSet<double>&, AdamState<double>&, const AdamConfig&);
template void ema_update<float>(std::span<float>, std::span<const float>, double);
template void ema_update<double>(std::span<double>, std::span<const double>, double);
template void ema_update<float>(nn::ParameterSet<float>&, const nn::ParameterSet<float>&, double);
template void ema_update<double>(nn::ParameterSet<double>&, const nn::ParameterSet<double>&, double);

diffusion::ScheduleConfig schedule_from_config(const Config& cfg) {
  diffusion::ScheduleConfig s;
  s.base_resolution = static_cast<int>(cfg.get_int("base_resolution", s.base_resolution));
  s.image_resolution = static_cast<int>(cfg.get_int("image_resolution", s.image_resolution));
  s.t_min = cfg.get_double("t_min", s.t_min);
  s.t_max = cfg.get_double("t_max", s.t_max);
  s.validate();
  return s;
}

Config schedule_to_config(const diffusion::ScheduleConfig& s) {
  Config c;
  c.set("base_resolution", s.base_resolution);
  c.set("image_resolution", s.image_resolution);
  c.set("t_min", s.t_min);
  c.set("t_max", s.t_max);
  return c;
}

// ---- Trainer ----

Trainer::Trainer(model::DenoiserConfig model_cfg, TrainConfig train_cfg,
                 diffusion::ScheduleConfig schedule, Config extra)
    : model_cfg_(std::move(model_cfg)),
      cfg_(std::move(train_cfg)),
      schedule_(schedule),
      extra_(std::move(extra)),
      model_(model_cfg_, derive_seed(cfg_.seed, "model")),
      ema_(model_.parameters().clone()),
      time_rng_(derive_seed(cfg_.seed, "timestep")),
      noise_rng_(derive_seed(cfg_.seed, "noise")),
      dropout_rng_(derive_seed(cfg_.seed, "dropout")) {
  cfg_.validate();
  schedule_.validate();
  model_cfg_.context_dropout = cfg_.context_dropout;
}

Checkpoint Trainer::make_checkpoint(const data::BatchIterator& data) const {
  Checkpoint ck;
  ck.config.merge(extra_);
  ck.config.merge(model_cfg_.to_config().prefixed("model."));
  ck.config.merge(cfg_.to_config().prefixed("train."));
  ck.config.merge(schedule_to_config(schedule_).prefixed("schedule."));
  ck.config.set("state.step", adam_.step);
  ck.config.set("state.rng.time", time_rng_.state());
  ck.config.set("state.rng.noise", noise_rng_.state());
  ck.config.set("state.rng.dropout", dropout_rng_.state());
  ck.config.set("state.data.epoch", data.state().epoch);
  ck.config.set("state.data.position", data.state().position);
  ck.put_parameters(model_.parameters());
  ck.put_parameters(ema_, "ema/");
  const auto& entries = model_.parameters().entries();
  if (adam_.m.size() == entries.size()) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& [name, t] = entries[i];
      ck.put("adam.m/" + name, Tensor(t.shape(), adam_.m[i]));
      ck.put("adam.v/" + name, Tensor(t.shape(), adam_.v[i]));
    }
  }
  return ck;
}

void Trainer::resume(const Checkpoint& ck, data::BatchIterator& data) {
  auto& params = model_.parameters();
  ck.load_parameters(params);
  ck.load_parameters(ema_, "ema/");
  adam_.step = ck.config.get_int("state.step");
  adam_.m.clear();
  adam_.v.clear();
  if (adam_.step > 0) {
    for (const auto& [name, t] : params.entries()) {
      const auto& m = ck.get("adam.m/" + name);
      const auto& v = ck.get("adam.v/" + name);
      adam_.m.emplace_back(m.data().begin(), m.data().end());
      adam_.v.emplace_back(v.data().begin(), v.data().end());
    }
  }
  time_rng_.restore(ck.config.get_string("state.rng.time"));
  noise_rng_.restore(ck.config.get_string("state.rng.noise"));
  dropout_rng_.restore(ck.config.get_string("state.rng.dropout"));
  data.restore({static_cast<std::uint64_t>(ck.config.get_int("state.data.epoch")),
                static_cast<std::uint64_t>(ck.config.get_int("state.data.position"))});
}

TrainResult Trainer::run(data::BatchIterator& data, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const bool fresh = adam_.step == 0;
  const auto mode = fresh ? std::ios::trunc : std::ios::app;
  std::ofstream loss_log(out_dir / "loss.csv", mode);
  std::ofstream timing_log(out_dir / "timing.csv", mode);
  if (!loss_log || !timing_log) throw DataError("cannot open training logs in " + out_dir.string());
  if (fresh) {
    loss_log << "step,loss\n";
    timing_log << "step,wall_time\n";
  }
  loss_log.precision(9);
  const auto ck_path = out_dir / "checkpoint.semc";
  const auto start = std::chrono::steady_clock::now();

  TrainResult result;
  auto& params = model_.parameters();
  while (adam_.step < cfg_.num_steps) {
    const std::int64_t step = adam_.step;
    auto batch = data.next();
    const auto keep = model::context_keep_mask(batch.targets.dim(0), cfg_.context_dropout, dropout_rng_);
    const auto cond = model::make_conditioning<float>(batch.context, keep);

    Tape tape;
    Tensor loss;
    {
      TapeScope<float> scope(tape);
      loss = diffusion::diffusion_loss<float>(batch.targets, model_.bind(&cond), schedule_, time_rng_,
                                              noise_rng_);
    }
    tape.backward(loss);
    adam_step(params, adam_, cfg_.adam);
    params.zero_grad();
    ema_update(ema_, params, cfg_.ema_decay);

    const double value = loss.item();
    result.losses.push_back(value);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    loss_log << step << ',' << value << '\n';
    timing_log << step << ',' << wall << '\n';
    if (adam_.step % cfg_.checkpoint_every == 0) {
      loss_log.flush();
      make_checkpoint(data).write(ck_path);
    }
  }
  result.steps = adam_.step;
  result.checkpoint = make_checkpoint(data);
  result.checkpoint.write(ck_path);
  return result;
}

TrainResult train(const model::DenoiserConfig& model_cfg, const TrainConfig& train_cfg,
                  const diffusion::ScheduleConfig& schedule, data::BatchIterator& data,
                  const std::filesystem::path& out_dir, const Config& extra) {
  Trainer trainer(model_cfg, train_cfg, schedule, extra);
  return trainer.run(data, out_dir);
}

model::Denoiser load_denoiser(const Checkpoint& ck, bool use_ema) {
  const auto cfg = model::DenoiserConfig::from_config(ck.config.subset("model."));
  model::Denoiser model(cfg, 0);
  ck.load_parameters(model.parameters(), use_ema ? "ema/" : "");
  return model;
}

}  // namespace semvar::train
