// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

namespace adimp::util {

// Flat "key = value" config text. One pair per line, '#' starts a comment,
// blank lines ignored. Keys are unique; duplicates are a parse error.
class KVConfig {
 public:
  static KVConfig parse(const std::string& text);
  static KVConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  void set(const std::string& key, const std::string& value);

  long long get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // Serialization is deterministic: keys in sorted order, "key = value".
  std::string serialize() const;
  void save(const std::string& path) const;

  const std::map<std::string, std::string>& items() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Typed schema for a config namespace. Validation reports every offending
// key in one error message.
struct KVSchema {
  enum class Type { Int, Real, Bool, Str };
  struct Field {
    std::string key;
    Type type = Type::Str;
    std::string default_value;  // empty + required=true means must be present
    bool required = false;
    std::vector<std::string> choices;  // non-empty restricts string values
  };
  std::vector<Field> fields;

  const Field* find(const std::string& key) const;
  // Throws std::invalid_argument listing unknown keys, missing required keys
  // and type errors. On success fills defaults for absent keys.
  void validate_and_default(KVConfig& cfg) const;
};

}  // namespace adimp::util
