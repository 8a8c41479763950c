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

#include "semvar/checkpoint.hpp"

#include <algorithm>
#include <sstream>

#include "semvar/binary_io.hpp"
#include "semvar/errors.hpp"

namespace semvar {

namespace {
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void Checkpoint::put(const std::string& name, const Tensor& value) {
  for (auto& [n, t] : tensors_) {
    if (n == name) {
      t = value.detach();
      return;
    }
  }
  tensors_.emplace_back(name, value.detach());
}

bool Checkpoint::contains(const std::string& name) const {
  return std::any_of(tensors_.begin(), tensors_.end(), [&](const auto& e) { return e.first == name; });
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors_) {
    if (n == name) return t;
  }
  throw DataError("checkpoint has no tensor '" + name + "'");
}

void Checkpoint::put_parameters(const nn::ParameterSet<float>& params, const std::string& prefix) {
  for (const auto& [name, t] : params.entries()) put(prefix + name, t);
}

void Checkpoint::load_parameters(nn::ParameterSet<float>& params, const std::string& prefix) const {
  for (auto& [name, t] : params.entries()) {
    const auto& stored = get(prefix + name);
    if (stored.shape() != t.shape()) {
      throw DataError("checkpoint tensor '" + prefix + name + "' has shape " + shape_str(stored.shape()) +
                      ", model expects " + shape_str(t.shape()));
    }
    std::copy(stored.data().begin(), stored.data().end(), t.mutable_data().begin());
  }
}

std::string Checkpoint::serialize() const {
  std::ostringstream buf;
  BinaryWriter w(buf);
  w.magic("SEMC");
  w.u32(kCheckpointVersion);
  const auto blob = config.to_string();
  w.u32(static_cast<std::uint32_t>(blob.size()));
  w.bytes(blob);
  w.u32(static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& [name, t] : tensors_) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) w.u64(static_cast<std::uint64_t>(e));
    w.f32s(t.data());
  }
  return buf.str();
}

Checkpoint Checkpoint::deserialize(const std::string& bytes, const std::string& source) {
  std::istringstream in(bytes);
  BinaryReader r(in, source);
  r.expect_magic("SEMC");
  if (r.u32() != kCheckpointVersion) throw DataError(source + ": unsupported checkpoint version");
  Checkpoint ck;
  ck.config = Config::parse(r.bytes(r.u32()));
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.bytes(r.u32());
    const auto rank = r.u32();
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::int64_t>(r.u64());
    std::vector<float> data(static_cast<std::size_t>(shape_size(shape)));
    r.f32s(data);
    ck.tensors_.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.at_end()) throw DataError(source + ": trailing bytes after checkpoint");
  return ck;
}

void Checkpoint::write(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

Checkpoint Checkpoint::read(const std::filesystem::path& path) {
  return deserialize(read_file(path), path.string());
}

}  // namespace semvar
