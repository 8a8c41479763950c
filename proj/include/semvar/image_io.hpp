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

#ifndef SEMVAR_IMAGE_IO_HPP_
#define SEMVAR_IMAGE_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "semvar/image.hpp"
#include "semvar/tensor.hpp"

namespace semvar::io {

// 8-bit RGB raster.
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Raster() = default;
  Raster(int width, int height, std::uint8_t fill = 255);
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

void write_png(const std::filesystem::path& path, const Raster& raster);

// Pixel values in [-1, 1] mapped to [0, 255]; single-channel images are grey.
void blit(Raster& canvas, int x0, int y0, std::span<const float> image, const ImageShape& shape, int zoom);

// One row per condition: the conditioning image leftmost, a gap, then its
// samples left to right.
Raster sample_mosaic(std::span<const std::vector<float>> conditions,
                     std::span<const std::vector<float>> samples_per_row, const ImageShape& shape,
                     int zoom = 4);

// Precision (x) against recall (y) on the unit square, one marker per point;
// markers shade from blue to red in list order.
Raster pr_scatter(std::span<const double> precision, std::span<const double> recall, int size = 256);

// Raw tensor file: magic "TNSR", u32 rank, u64 extents, f32 data.
void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

}  // namespace semvar::io

#endif  // SEMVAR_IMAGE_IO_HPP_
