#include "blobbench/kv_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "blobbench/error.hpp"

namespace blobbench {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::uint64_t parse_u64(const std::string& text, const std::string& what) {
  std::uint64_t value = 0;
  const auto* begin = text.data();
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (text.empty() || ec != std::errc() || ptr != end) {
    fail(ErrorCode::kConfig, what + ": expected a decimal integer, got '" + text + "'");
  }
  return value;
}

double parse_double(const std::string& text, const std::string& what) {
  // from_chars for double is missing from older libstdc++; strtod is fine here.
  char* end = nullptr;
  const double value = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size()) {
    fail(ErrorCode::kConfig, what + ": expected a number, got '" + text + "'");
  }
  return value;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

KvConfig KvConfig::parse(const std::string& text) {
  KvConfig config;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::kConfig, "line " + std::to_string(lineno) + ": missing '='");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      fail(ErrorCode::kConfig, "line " + std::to_string(lineno) + ": empty key");
    }
    if (!config.values_.emplace(key, value).second) {
      fail(ErrorCode::kConfig,
           "line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  return config;
}

KvConfig KvConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kConfig, "cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

std::optional<std::string> KvConfig::find(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string KvConfig::get_string(const std::string& key) const {
  auto value = find(key);
  if (!value) fail(ErrorCode::kConfig, "missing key '" + key + "'");
  return *value;
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) const {
  return find(key).value_or(fallback);
}

std::uint64_t KvConfig::get_u64(const std::string& key) const {
  return parse_u64(get_string(key), key);
}

std::uint64_t KvConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto value = find(key);
  return value ? parse_u64(*value, key) : fallback;
}

double KvConfig::get_double(const std::string& key) const {
  return parse_double(get_string(key), key);
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  auto value = find(key);
  return value ? parse_double(*value, key) : fallback;
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  auto value = find(key);
  if (!value) return fallback;
  if (*value == "true" || *value == "1" || *value == "yes") return true;
  if (*value == "false" || *value == "0" || *value == "no") return false;
  fail(ErrorCode::kConfig, key + ": expected true/false, got '" + *value + "'");
}

std::vector<std::string> KvConfig::get_list(const std::string& key) const {
  return split_list(get_string(key));
}

std::string KvConfig::to_text() const {
  std::string out;
  for (const auto& [key, value] : values_) {
    out += key;
    out += " = ";
    out += value;
    out += '\n';
  }
  return out;
}

}  // namespace blobbench
