#include "kpg/config.hpp"

#include <charconv>
#include <fstream>
#include <istream>

#include "kpg/errors.hpp"

namespace kpg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::parse(std::istream& in, const std::string& source) {
  Config c;
  c.source_ = source;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, source + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    require(!key.empty(), source + ":" + std::to_string(line_no) + ": empty key");
    c.values_[key] = trim(line.substr(eq + 1));
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream f(path);
  require(bool(f), "cannot open config file " + path);
  return parse(f, path);
}

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  require(it != values_.end(), source_ + ": missing required key '" + key + "'");
  return it->second;
}

std::string Config::get_or(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key) const {
  const auto& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    require(used == v.size(), "");
    return d;
  } catch (const std::exception&) {
    throw ContractError(source_ + ": key '" + key + "' expects a number, got '" + v + "'");
  }
}

double Config::get_double_or(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

std::int64_t Config::get_int(const std::string& key) const {
  const auto& v = get(key);
  std::int64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && ptr == v.data() + v.size(),
          source_ + ": key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

std::int64_t Config::get_int_or(const std::string& key, std::int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

bool Config::get_bool_or(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ContractError(source_ + ": key '" + key + "' expects true or false, got '" + v + "'");
}

void Config::require_keys(const std::vector<std::string>& keys) const {
  std::string missing;
  for (const auto& k : keys)
    if (!has(k)) missing += (missing.empty() ? "'" : ", '") + k + "'";
  require(missing.empty(), source_ + ": missing required key(s) " + missing);
}

}  // namespace kpg
