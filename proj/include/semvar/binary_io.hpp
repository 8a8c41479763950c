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

#ifndef SEMVAR_BINARY_IO_HPP_
#define SEMVAR_BINARY_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace semvar {

// Little-endian primitive writer; the byte layout is independent of the
// host's endianness.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  void magic(std::string_view four_cc);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f32s(std::span<const float> values);
  void bytes(std::string_view s);

 private:
  std::ostream& out_;
};

class BinaryReader {
 public:
  BinaryReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  // Throws DataError when the next four bytes differ from `four_cc`.
  void expect_magic(std::string_view four_cc);
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  void f32s(std::span<float> out);
  std::string bytes(std::size_t n);
  bool at_end();

 private:
  void read_raw(char* dst, std::size_t n);

  std::istream& in_;
  std::string source_;
};

// Writes `content` to `path` via a temporary file and rename, so readers
// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

}  // namespace semvar

#endif  // SEMVAR_BINARY_IO_HPP_
