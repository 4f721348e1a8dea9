#pragma once

#include <cctype>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rpt {

class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// Allowed keys per section; parsing rejects anything outside the schema so
// typos fail loudly instead of silently falling back to defaults.
using ConfigSchema = std::map<std::string, std::set<std::string>>;

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace detail

// Flat key-value configuration: "[section]" headers, "key = value" entries,
// "#" comments. Values are stored under "section.key". Getters record which
// keys were consumed so a run can report entries it never looked at.
class ConfigMap {
 public:
  ConfigMap() = default;

  void set(const std::string& dotted_key, const std::string& value) { values_[dotted_key] = value; }
  bool contains(const std::string& dotted_key) const { return values_.count(dotted_key) > 0; }

  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    return it->second;
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    return parse_int(key, it->second);
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    return parse_double(key, it->second);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw config_error("config key '" + key + "': expected a boolean, got '" + v + "'");
  }

  std::vector<double> get_double_list(const std::string& key, std::vector<double> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    std::vector<double> out;
    for (const std::string& part : split_list(it->second)) out.push_back(parse_double(key, part));
    return out;
  }

  std::vector<std::string> get_string_list(const std::string& key, std::vector<std::string> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    return split_list(it->second);
  }

  std::vector<std::string> unconsumed() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!consumed_.count(k)) out.push_back(k);
    return out;
  }

 private:
  static std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::string part;
    std::istringstream in(value);
    while (std::getline(in, part, ',')) {
      part = detail::trim(part);
      if (!part.empty()) out.push_back(part);
    }
    return out;
  }

  static long long parse_int(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      long long x = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("trailing characters");
      return x;
    } catch (const std::exception&) {
      throw config_error("config key '" + key + "': expected an integer, got '" + v + "'");
    }
  }

  static double parse_double(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      double x = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("trailing characters");
      return x;
    } catch (const std::exception&) {
      throw config_error("config key '" + key + "': expected a number, got '" + v + "'");
    }
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

// Parses config text against a schema. Unknown sections and unknown keys are
// errors, as are entries before any section header.
inline ConfigMap parse_config_text(const std::string& text, const ConfigSchema& schema) {
  ConfigMap cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw config_error("line " + std::to_string(lineno) + ": unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (!schema.count(section)) throw config_error("line " + std::to_string(lineno) + ": unknown section '" + section + "'");
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw config_error("line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw config_error("line " + std::to_string(lineno) + ": empty key");
    if (section.empty()) throw config_error("line " + std::to_string(lineno) + ": entry before any [section] header");
    if (!schema.at(section).count(key))
      throw config_error("line " + std::to_string(lineno) + ": unknown key '" + key + "' in section [" + section + "]");
    cfg.set(section + "." + key, value);
  }
  return cfg;
}

// Applies one "section.key=value" command-line override, schema-checked the
// same way as file entries.
inline void apply_override(ConfigMap& cfg, const std::string& assignment, const ConfigSchema& schema) {
  std::size_t eq = assignment.find('=');
  if (eq == std::string::npos) throw config_error("override '" + assignment + "': expected section.key=value");
  std::string key = detail::trim(assignment.substr(0, eq));
  std::string value = detail::trim(assignment.substr(eq + 1));
  std::size_t dot = key.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == key.size())
    throw config_error("override '" + assignment + "': key must look like section.key");
  std::string section = key.substr(0, dot);
  std::string name = key.substr(dot + 1);
  if (!schema.count(section)) throw config_error("override '" + assignment + "': unknown section '" + section + "'");
  if (!schema.at(section).count(name))
    throw config_error("override '" + assignment + "': unknown key '" + name + "' in section [" + section + "]");
  cfg.set(key, value);
}

}  // namespace rpt
