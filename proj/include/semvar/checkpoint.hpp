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

#ifndef SEMVAR_CHECKPOINT_HPP_
#define SEMVAR_CHECKPOINT_HPP_

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "semvar/config.hpp"
#include "semvar/nn.hpp"
#include "semvar/tensor.hpp"

namespace semvar {

// Named float32 tensors plus a key=value config blob.
//
// Layout, little-endian: "SEMC", u32 version, u32 blob length, blob bytes,
// u32 tensor count, then per tensor: u32 name length, name bytes, u32 rank,
// rank x u64 extents, f32 data. Raw parameters are stored under their own
// names, averaged parameters under "ema/<name>", optimizer moments under
// "adam.m/<name>" and "adam.v/<name>".
class Checkpoint {
 public:
  Config config;

  void put(const std::string& name, const Tensor& value);
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& tensors() const { return tensors_; }

  void put_parameters(const nn::ParameterSet<float>& params, const std::string& prefix = "");
  // Copies stored values into `params`; shapes must match exactly.
  void load_parameters(nn::ParameterSet<float>& params, const std::string& prefix = "") const;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes, const std::string& source);
  void write(const std::filesystem::path& path) const;
  static Checkpoint read(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, Tensor>> tensors_;
};

}  // namespace semvar

#endif  // SEMVAR_CHECKPOINT_HPP_
