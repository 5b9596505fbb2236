#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace kpg {

// Flat "key = value" settings. '#' starts a comment; blank lines are
// ignored. Later assignments (including command-line overrides) win.
class Config {
 public:
  static Config parse(std::istream& in, const std::string& source = "config");
  static Config load(const std::string& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  // Missing keys raise ContractError naming the key and the source.
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int_or(const std::string& key, std::int64_t fallback) const;
  bool get_bool_or(const std::string& key, bool fallback) const;

  // Throws one error listing every absent key.
  void require_keys(const std::vector<std::string>& keys) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  const std::string& source() const { return source_; }

 private:
  std::map<std::string, std::string> values_;
  std::string source_ = "config";
};

}  // namespace kpg
