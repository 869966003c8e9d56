#include "effort/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>

#include "effort/errors.hpp"
#include "effort/json_util.hpp"

namespace effort {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  const std::string t = trim(s);
  if (t == "inf" || t == "+inf") return INFINITY;
  if (t == "-inf") return -INFINITY;
  double v = 0.0;
  const char* end = t.data() + t.size();
  auto [p, ec] = std::from_chars(t.data(), end, v);
  if (t.empty() || ec != std::errc() || p != end) throw ConfigError(what + ": not a number: '" + s + "'");
  return v;
}

int parse_int(const std::string& s, const std::string& what) {
  const std::string t = trim(s);
  int v = 0;
  const char* end = t.data() + t.size();
  auto [p, ec] = std::from_chars(t.data(), end, v);
  if (t.empty() || ec != std::errc() || p != end) throw ConfigError(what + ": not an integer: '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s, const std::string& what) {
  const std::string t = trim(s);
  if (t == "true" || t == "yes" || t == "on" || t == "1") return true;
  if (t == "false" || t == "no" || t == "off" || t == "0") return false;
  throw ConfigError(what + ": not a boolean: '" + s + "'");
}

namespace {

bool valid_name(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
  return true;
}

std::string shortest(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) return fmt_double(v);
  return std::string(buf, p);
}

}  // namespace

Config Config::parse(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!valid_name(section)) throw ConfigError(where + ": bad section name '" + section + "'");
      cfg.sections_[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    if (section.empty()) throw ConfigError(where + ": key outside of any section");
    const std::string key = trim(line.substr(0, eq));
    if (!valid_name(key)) throw ConfigError(where + ": bad key '" + key + "'");
    auto& sec = cfg.sections_[section];
    if (sec.count(key)) throw ConfigError(where + ": duplicate key '" + section + "." + key + "'");
    sec[key] = trim(line.substr(eq + 1));
  }
  return cfg;
}

Config Config::load(const std::string& path) {
  return parse(read_text_file(path));
}

std::string Config::serialize() const {
  std::string out;
  bool first = true;
  for (const auto& [name, sec] : sections_) {
    if (!first) out += '\n';
    first = false;
    out += '[' + name + "]\n";
    for (const auto& [k, v] : sec) out += k + " = " + v + '\n';
  }
  return out;
}

void Config::save(const std::string& path) const {
  write_text_file(path, serialize());
}

bool Config::has(const std::string& section, const std::string& key) const {
  auto it = sections_.find(section);
  return it != sections_.end() && it->second.count(key) > 0;
}

const std::string& Config::get(const std::string& section, const std::string& key) const {
  auto it = sections_.find(section);
  if (it == sections_.end() || !it->second.count(key)) throw ConfigError("missing key " + section + "." + key);
  return it->second.at(key);
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
  if (!valid_name(section) || !valid_name(key)) throw ConfigError("bad config key " + section + "." + key);
  if (value.find('#') != std::string::npos || value.find('\n') != std::string::npos)
    throw ConfigError("config values cannot contain '#' or newlines");
  sections_[section][key] = trim(value);
}

void Config::set(const std::string& section, const std::string& key, double value) {
  set(section, key, shortest(value));
}

void Config::set_path(const std::string& path, const std::string& value) {
  const auto dot = path.find('.');
  if (dot == std::string::npos) throw ConfigError("expected section.key, got '" + path + "'");
  set(path.substr(0, dot), path.substr(dot + 1), value);
}

void Config::merge(const Config& other) {
  for (const auto& [name, sec] : other.sections_) {
    auto& mine = sections_[name];
    for (const auto& [k, v] : sec) mine[k] = v;
  }
}

double Config::get_double(const std::string& section, const std::string& key) const {
  return parse_double(get(section, key), section + "." + key);
}

int Config::get_int(const std::string& section, const std::string& key) const {
  return parse_int(get(section, key), section + "." + key);
}

bool Config::get_bool(const std::string& section, const std::string& key) const {
  return parse_bool(get(section, key), section + "." + key);
}

std::vector<double> Config::get_list(const std::string& section, const std::string& key) const {
  std::vector<double> out;
  for (const auto& s : split_list(get(section, key))) out.push_back(parse_double(s, section + "." + key));
  return out;
}

std::vector<std::string> Config::get_strings(const std::string& section, const std::string& key) const {
  return split_list(get(section, key));
}

}  // namespace effort
