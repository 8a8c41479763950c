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

#ifndef SEMVAR_CONFIG_HPP_
#define SEMVAR_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace semvar {

// Plain-text key=value configuration. Blank lines and lines starting with
// '#' are ignored; later assignments override earlier ones.
class Config {
 public:
  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  void set(const std::string& key, double value);
  void set(const std::string& key, std::int64_t value);
  void set(const std::string& key, std::uint64_t value);
  void set(const std::string& key, int value) { set(key, static_cast<std::int64_t>(value)); }
  void set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Overlays every entry of `other` onto this config.
  void merge(const Config& other);
  // Entries whose key starts with `prefix`, with the prefix stripped.
  Config subset(std::string_view prefix) const;
  // Same entries with `prefix` prepended to every key.
  Config prefixed(std::string_view prefix) const;

  // Sorted key=value lines; parse(to_string()) reproduces the config.
  std::string to_string() const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

  bool operator==(const Config&) const = default;

 private:
  std::map<std::string, std::string> entries_;
};

// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

}  // namespace semvar

#endif  // SEMVAR_CONFIG_HPP_
