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

#ifndef SEMVAR_RANDOM_HPP_
#define SEMVAR_RANDOM_HPP_

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace semvar {

// Mixes a 64-bit value (splitmix64 finalizer).
std::uint64_t mix64(std::uint64_t x);

// Derives a child seed from a parent seed and a purpose label, so that
// independent streams (timesteps, noise, dropout, data order) never share
// state.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

// Seeded random stream. Results are reproducible for a given build; the full
// state round-trips through state()/restore().
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  double normal();
  std::size_t index(std::size_t n);  // uniform in [0, n)
  bool bernoulli(double p);
  std::uint64_t next_u64();

  Rng split(std::string_view purpose);

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace semvar

#endif  // SEMVAR_RANDOM_HPP_
