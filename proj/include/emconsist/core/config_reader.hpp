#pragma once

#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emconsist/core/error.hpp"

namespace emc {

/// Strict JSON reader: collects every type error and unknown key instead of stopping at the first.
class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& j, std::string path, std::vector<std::string>& errors)
      : json_(j.is_null() ? empty() : j), path_(std::move(path)), errors_(&errors) {
    if (!json_.is_object()) error(path_.empty() ? "<root>" : path_, "expected an object");
  }

  ~ConfigReader() = default;
  ConfigReader(const ConfigReader&) = delete;
  ConfigReader& operator=(const ConfigReader&) = delete;

  template <class T>
  bool get(const char* key, T& out) {
    seen_.insert(key);
    if (!json_.is_object() || !json_.contains(key)) return false;
    const auto& v = json_.at(key);
    if (v.is_null()) return false;
    try {
      out = v.get<T>();
    } catch (const nlohmann::json::exception&) {
      error(qualified(key), "has the wrong type (" + std::string(v.type_name()) + ")");
      return false;
    }
    return true;
  }

  /// Nested object; missing keys read as an empty object.
  ConfigReader child(const char* key) {
    seen_.insert(key);
    if (json_.is_object() && json_.contains(key)) return ConfigReader(json_.at(key), qualified(key), *errors_);
    return ConfigReader(empty(), qualified(key), *errors_);
  }

  bool has(const char* key) const { return json_.is_object() && json_.contains(key) && !json_.at(key).is_null(); }
  const nlohmann::json& raw(const char* key) {
    seen_.insert(key);
    return json_.at(key);
  }

  void check(bool cond, const char* key, const std::string& message) {
    if (!cond) error(qualified(key), message);
  }

  /// Records every key present in the object that was never requested.
  void finish() {
    if (!json_.is_object()) return;
    for (const auto& [k, _] : json_.items())
      if (!seen_.count(k)) error(qualified(k.c_str()), "is not a recognized key");
  }

  const std::string& path() const noexcept { return path_; }

 private:
  static const nlohmann::json& empty() {
    static const nlohmann::json e = nlohmann::json::object();
    return e;
  }
  std::string qualified(const char* key) const { return path_.empty() ? std::string(key) : path_ + "." + key; }
  void error(const std::string& where, const std::string& what) { errors_->push_back(where + " " + what); }

  nlohmann::json json_;
  std::string path_;
  std::vector<std::string>* errors_;
  std::set<std::string> seen_;
};

inline void throw_if_errors(const std::vector<std::string>& errors, const std::string& context) {
  if (errors.empty()) return;
  std::string msg = context + ": " + std::to_string(errors.size()) + " problem(s)";
  for (const auto& e : errors) msg += "\n  - " + e;
  fail(ErrorKind::config, msg);
}

}  // namespace emc
