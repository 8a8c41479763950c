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

#ifndef SEMVAR_IMAGE_HPP_
#define SEMVAR_IMAGE_HPP_

#include <cstdint>
#include <string>

namespace semvar {

// Images are row-major [H, W, C] float arrays with values in [-1, 1].
struct ImageShape {
  int height = 16;
  int width = 16;
  int channels = 3;

  std::int64_t size() const { return static_cast<std::int64_t>(height) * width * channels; }
  bool operator==(const ImageShape&) const = default;
  std::string str() const {
    return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
  }
};

// Generative factors of a synthetic image. class_id and hue are shared by
// every member of an episode; the rest is per-member nuisance.
struct ImageFactors {
  std::uint32_t class_id = 0;
  float hue = 0.0f;  // [0, 1)
  float pos_x = 0.5f;  // shape center, fraction of width
  float pos_y = 0.5f;
  float scale = 0.3f;  // radius, fraction of min(H, W)
  float rotation = 0.0f;  // radians
  float noise_level = 0.0f;  // pixel noise stddev

  static constexpr int kNumNuisance = 5;
};

}  // namespace semvar

#endif  // SEMVAR_IMAGE_HPP_
