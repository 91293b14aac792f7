// Copyright 2026 The efqat Authors. All Rights Reserved.
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

// Strict JSON helpers shared by the config, checkpoint and metrics code.
// Private to the library.

#ifndef EFQAT_SRC_JSON_IO_HPP_
#define EFQAT_SRC_JSON_IO_HPP_

#include <set>
#include <string>

#include "efqat/error.hpp"
#include "efqat/netspec.hpp"
#include "json.hpp"

namespace efqat {

using json = nlohmann::json;

/// Reads keys from one JSON object and rejects any key it was not asked for.
class StrictObject {
 public:
  StrictObject(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key) && !obj_.at(key).is_null();
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return convert<T>(key);
  }

  template <typename T>
  T require(const std::string& key) {
    if (!has(key)) throw ConfigError(path_ + ": missing required key '" + key + "'");
    return convert<T>(key);
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return obj_.at(key);
  }

  std::string where(const std::string& key) const { return path_ + "." + key; }

  /// Throws ConfigError naming the first unknown key.
  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  template <typename T>
  T convert(const std::string& key) {
    const json& v = obj_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(where(key) + ": expected true or false");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError(where(key) + ": expected an integer");
        if (std::is_unsigned_v<T> && v.get<long long>() < 0) throw ConfigError(where(key) + ": must not be negative");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(where(key) + ": expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(where(key) + ": expected a string");
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

json netspec_to_json(const NetSpec& net);
/// Accepts explicit layers or {"preset": "reference_cnn" | "mlp", ...}.
NetSpec netspec_from_json(const json& j, const std::string& path);

}  // namespace efqat

#endif  // EFQAT_SRC_JSON_IO_HPP_
