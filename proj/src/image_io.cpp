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

#include "semvar/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "semvar/binary_io.hpp"
#include "semvar/errors.hpp"

namespace semvar::io {

Raster::Raster(int w, int h, std::uint8_t fill)
    : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {
  if (w < 0 || h < 0) throw UsageError("Raster: negative size");
}

void Raster::set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  auto* p = &rgb[(static_cast<std::size_t>(y) * width + x) * 3];
  p[0] = r;
  p[1] = g;
  p[2] = b;
}

void write_png(const std::filesystem::path& path, const Raster& raster) {
  if (raster.width == 0 || raster.height == 0) throw UsageError("write_png: empty raster");
  const auto tmp = path.string() + ".tmp";
  std::FILE* fp = std::fopen(tmp.c_str(), "wb");
  if (fp == nullptr) throw DataError("cannot open " + tmp + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw DataError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(raster.width), static_cast<png_uint_32>(raster.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < raster.height; ++y) {
    auto* row = const_cast<png_bytep>(&raster.rgb[static_cast<std::size_t>(y) * raster.width * 3]);
    png_write_row(png, row);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
  std::filesystem::rename(tmp, path);
}

namespace {

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, -1.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround((c + 1.0f) * 127.5f));
}

}  // namespace

void blit(Raster& canvas, int x0, int y0, std::span<const float> image, const ImageShape& shape, int zoom) {
  if (static_cast<std::int64_t>(image.size()) != shape.size()) throw UsageError("blit: image size mismatch");
  for (int y = 0; y < shape.height; ++y) {
    for (int x = 0; x < shape.width; ++x) {
      const auto* px = &image[(static_cast<std::size_t>(y) * shape.width + x) * shape.channels];
      const std::uint8_t r = to_byte(px[0]);
      const std::uint8_t g = shape.channels >= 3 ? to_byte(px[1]) : r;
      const std::uint8_t b = shape.channels >= 3 ? to_byte(px[2]) : r;
      for (int dy = 0; dy < zoom; ++dy) {
        for (int dx = 0; dx < zoom; ++dx) canvas.set(x0 + x * zoom + dx, y0 + y * zoom + dy, r, g, b);
      }
    }
  }
}

Raster sample_mosaic(std::span<const std::vector<float>> conditions,
                     std::span<const std::vector<float>> samples_per_row, const ImageShape& shape, int zoom) {
  if (conditions.size() != samples_per_row.size() || conditions.empty()) {
    throw UsageError("sample_mosaic: need one sample row per condition");
  }
  const auto item = static_cast<std::size_t>(shape.size());
  std::size_t max_samples = 0;
  for (const auto& row : samples_per_row) {
    if (row.size() % item != 0) throw UsageError("sample_mosaic: ragged sample buffer");
    max_samples = std::max(max_samples, row.size() / item);
  }
  const int tile_w = shape.width * zoom, tile_h = shape.height * zoom, pad = 2, gap = 3 * pad;
  const int cols = static_cast<int>(max_samples);
  const int width = pad + tile_w + gap + cols * (tile_w + pad);
  const int height = pad + static_cast<int>(conditions.size()) * (tile_h + pad);
  Raster canvas(width, height, 255);
  for (std::size_t r = 0; r < conditions.size(); ++r) {
    const int y = pad + static_cast<int>(r) * (tile_h + pad);
    blit(canvas, pad, y, conditions[r], shape, zoom);
    const auto& row = samples_per_row[r];
    for (std::size_t s = 0; s < row.size() / item; ++s) {
      const int x = pad + tile_w + gap + static_cast<int>(s) * (tile_w + pad);
      blit(canvas, x, y, std::span<const float>(row).subspan(s * item, item), shape, zoom);
    }
  }
  return canvas;
}

Raster pr_scatter(std::span<const double> precision, std::span<const double> recall, int size) {
  if (precision.size() != recall.size()) throw UsageError("pr_scatter: length mismatch");
  Raster canvas(size, size, 255);
  const int margin = size / 10;
  const int extent = size - 2 * margin;
  for (int i = 0; i <= extent; ++i) {
    canvas.set(margin + i, size - margin, 0, 0, 0);  // precision axis
    canvas.set(margin, size - margin - i, 0, 0, 0);  // recall axis
  }
  for (int tick = 0; tick <= 10; ++tick) {
    const int off = tick * extent / 10;
    for (int d = 1; d <= 3; ++d) {
      canvas.set(margin + off, size - margin + d, 0, 0, 0);
      canvas.set(margin - d, size - margin - off, 0, 0, 0);
    }
  }
  const std::size_t n = precision.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double f = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
    const auto red = static_cast<std::uint8_t>(std::lround(255.0 * f));
    const auto blue = static_cast<std::uint8_t>(255 - red);
    const int cx = margin + static_cast<int>(std::lround(std::clamp(precision[i], 0.0, 1.0) * extent));
    const int cy = size - margin - static_cast<int>(std::lround(std::clamp(recall[i], 0.0, 1.0) * extent));
    for (int dy = -3; dy <= 3; ++dy) {
      for (int dx = -3; dx <= 3; ++dx) canvas.set(cx + dx, cy + dy, red, 0, blue);
    }
  }
  return canvas;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ostringstream out;
  BinaryWriter w(out);
  w.magic("TNSR");
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) w.u64(static_cast<std::uint64_t>(e));
  w.f32s(t.data());
  write_file_atomic(path, out.str());
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  BinaryReader r(in, path.string());
  r.expect_magic("TNSR");
  const auto rank = r.u32();
  if (rank > 8) throw DataError(path.string() + ": implausible tensor rank");
  Shape shape(rank);
  for (auto& e : shape) e = static_cast<std::int64_t>(r.u64());
  std::vector<float> data(static_cast<std::size_t>(shape_size(shape)));
  r.f32s(data);
  return Tensor(shape, std::move(data));
}

}  // namespace semvar::io
