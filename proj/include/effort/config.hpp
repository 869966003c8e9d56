#pragma once

#include <map>
#include <string>
#include <vector>

namespace effort {

// Sectioned key-value text:
//
//   # comment
//   [section]
//   key = value      # trailing comment
//
// Keys are unique within a section and every key belongs to a section.
// Values are trimmed; lists are comma separated.
class Config {
 public:
  using Section = std::map<std::string, std::string>;

  static Config parse(const std::string& text);
  static Config load(const std::string& path);
  // Sections and keys in sorted order; parse(serialize()) == *this.
  std::string serialize() const;
  void save(const std::string& path) const;

  bool has(const std::string& section, const std::string& key) const;
  const std::string& get(const std::string& section, const std::string& key) const;
  void set(const std::string& section, const std::string& key, const std::string& value);
  void set(const std::string& section, const std::string& key, double value);
  // "section.key" form used by sweeps and --set overrides.
  void set_path(const std::string& path, const std::string& value);
  // Every key of `other` replaces the one here.
  void merge(const Config& other);

  double get_double(const std::string& section, const std::string& key) const;
  int get_int(const std::string& section, const std::string& key) const;
  bool get_bool(const std::string& section, const std::string& key) const;
  std::vector<double> get_list(const std::string& section, const std::string& key) const;
  std::vector<std::string> get_strings(const std::string& section, const std::string& key) const;

  const std::map<std::string, Section>& sections() const { return sections_; }
  bool operator==(const Config& other) const { return sections_ == other.sections_; }

 private:
  std::map<std::string, Section> sections_;
};

std::string trim(const std::string& s);
std::vector<std::string> split_list(const std::string& s);
double parse_double(const std::string& s, const std::string& what);
int parse_int(const std::string& s, const std::string& what);
bool parse_bool(const std::string& s, const std::string& what);

}  // namespace effort
