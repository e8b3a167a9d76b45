// SPDX-License-Identifier: Apache-2.0
#include "adimp/util/kvconfig.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace adimp::util {
namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

KVConfig KVConfig::parse(const std::string& text) {
  KVConfig out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    if (out.values_.count(key))
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    out.values_[key] = value;
  }
  return out;
}

KVConfig KVConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const std::string& KVConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::out_of_range("config key not set: " + key);
  return it->second;
}

std::string KVConfig::get_or(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

void KVConfig::set(const std::string& key, const std::string& value) { values_[key] = value; }

long long KVConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  size_t pos = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': not an integer: '" + v + "'");
  }
  if (pos != v.size())
    throw std::invalid_argument("config key '" + key + "': not an integer: '" + v + "'");
  return out;
}

double KVConfig::get_real(const std::string& key) const {
  const std::string& v = get(key);
  size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': not a number: '" + v + "'");
  }
  if (pos != v.size())
    throw std::invalid_argument("config key '" + key + "': not a number: '" + v + "'");
  return out;
}

bool KVConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config key '" + key + "': not a boolean: '" + v + "'");
}

std::string KVConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) {
    out += k;
    out += " = ";
    out += v;
    out += "\n";
  }
  return out;
}

void KVConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write config file: " + path);
  out << serialize();
}

const KVSchema::Field* KVSchema::find(const std::string& key) const {
  for (const auto& f : fields)
    if (f.key == key) return &f;
  return nullptr;
}

void KVSchema::validate_and_default(KVConfig& cfg) const {
  std::vector<std::string> problems;
  for (const auto& [key, value] : cfg.items()) {
    const Field* f = find(key);
    if (!f) {
      problems.push_back("unknown key '" + key + "'");
      continue;
    }
    try {
      switch (f->type) {
        case Type::Int:
          cfg.get_int(key);
          break;
        case Type::Real:
          cfg.get_real(key);
          break;
        case Type::Bool:
          cfg.get_bool(key);
          break;
        case Type::Str:
          if (!f->choices.empty()) {
            bool ok = false;
            for (const auto& c : f->choices) ok = ok || c == value;
            if (!ok)
              problems.push_back("key '" + key + "': value '" + value + "' not in allowed set");
          }
          break;
      }
    } catch (const std::exception& e) {
      problems.push_back(e.what());
    }
  }
  for (const auto& f : fields) {
    if (cfg.has(f.key)) continue;
    if (f.required) {
      problems.push_back("missing required key '" + f.key + "'");
    } else if (!f.default_value.empty() || f.type == Type::Str) {
      cfg.set(f.key, f.default_value);
    }
  }
  if (!problems.empty()) {
    std::string msg = "config validation failed:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw std::invalid_argument(msg);
  }
}

}  // namespace adimp::util
