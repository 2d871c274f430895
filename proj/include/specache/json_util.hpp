#pragma once

#include <set>
#include <string>
#include <utility>

#include <json.hpp>

#include "specache/common.hpp"

namespace specache {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

/// Schema violation in a configuration document. `path` is a JSON pointer.
class ConfigError : public ValidationError {
 public:
  ConfigError(std::string path, const std::string& message)
      : ValidationError(path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// Reads one JSON object field by field and rejects keys nobody asked for.
class StrictObject {
 public:
  StrictObject(const Json& object, std::string path) : object_(object), path_(std::move(path)) {
    if (!object_.is_object()) throw ConfigError(path_.empty() ? "/" : path_, "expected an object");
  }

  template <typename T>
  void read(const char* key, T& target) {
    seen_.insert(key);
    auto it = object_.find(key);
    if (it == object_.end()) return;
    try {
      target = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(child(key), std::string("wrong type (") + e.what() + ")");
    }
  }

  /// Hands a nested object to `fn(const Json&, path)` if present.
  template <typename Fn>
  void nested(const char* key, Fn&& fn) {
    seen_.insert(key);
    auto it = object_.find(key);
    if (it != object_.end()) fn(*it, child(key));
  }

  void finish() const {
    for (const auto& [key, value] : object_.items())
      if (!seen_.count(key)) throw ConfigError(child(key), "unknown key");
  }

  std::string child(const std::string& key) const { return path_ + "/" + key; }

 private:
  const Json& object_;
  std::string path_;
  std::set<std::string, std::less<>> seen_;
};

}  // namespace specache
