#include <charconv>
#include <fstream>
#include <sstream>

#include "anyshot/config.hpp"
#include "anyshot/errors.hpp"

namespace anyshot {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

bool valid_key(const std::string& key) {
  if (key.empty() || key.front() == '.' || key.back() == '.') return false;
  for (char c : key) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '.';
    if (!ok) return false;
  }
  return key.find("..") == std::string::npos;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(number);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!valid_key(key)) throw ConfigError(where + ": invalid key '" + key + "'");
    if (cfg.values_.contains(key)) {
      throw ConfigError(where + ": duplicate key '" + key + "' (first on line " +
                        std::to_string(cfg.lines_[key]) + ")");
    }
    cfg.values_[key] = value;
    cfg.lines_[key] = number;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  KeyValueConfig cfg = parse(text.str(), path.string());
  cfg.base_dir_ = path.parent_path();
  return cfg;
}

const std::string* KeyValueConfig::find(const std::string& key) const {
  used_.insert(key);
  const auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

bool KeyValueConfig::contains(const std::string& key) const {
  return values_.contains(key);
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  const std::string* v = find(key);
  return v ? *v : fallback;
}

std::string KeyValueConfig::require_string(const std::string& key) const {
  const std::string* v = find(key);
  if (!v) throw ConfigError(origin_ + ": missing required key '" + key + "'");
  return *v;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  double out = 0.0;
  const auto res = std::from_chars(v->data(), v->data() + v->size(), out);
  if (res.ec != std::errc() || res.ptr != v->data() + v->size()) {
    throw ConfigError(origin_ + ": '" + key + "' is not a number: '" + *v + "'");
  }
  return out;
}

std::uint64_t KeyValueConfig::get_uint(const std::string& key, std::uint64_t fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  std::uint64_t out = 0;
  const auto res = std::from_chars(v->data(), v->data() + v->size(), out);
  if (res.ec != std::errc() || res.ptr != v->data() + v->size()) {
    throw ConfigError(origin_ + ": '" + key + "' is not a non-negative integer: '" + *v + "'");
  }
  return out;
}

std::uint64_t KeyValueConfig::require_uint(const std::string& key) const {
  if (!values_.contains(key)) throw ConfigError(origin_ + ": missing required key '" + key + "'");
  return get_uint(key, 0);
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError(origin_ + ": '" + key + "' is not a boolean: '" + *v + "'");
}

std::vector<std::string> KeyValueConfig::get_list(const std::string& key,
                                                  const std::vector<std::string>& fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  std::vector<std::string> out;
  std::istringstream in(*v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError(origin_ + ": '" + key + "' has an empty list item");
    out.push_back(item);
  }
  return out;
}

std::vector<double> KeyValueConfig::get_double_list(const std::string& key,
                                                    const std::vector<double>& fallback) const {
  if (!values_.contains(key)) {
    used_.insert(key);
    return fallback;
  }
  std::vector<double> out;
  for (const auto& item : get_list(key, {})) {
    double x = 0.0;
    const auto res = std::from_chars(item.data(), item.data() + item.size(), x);
    if (res.ec != std::errc() || res.ptr != item.data() + item.size()) {
      throw ConfigError(origin_ + ": '" + key + "' has a non-numeric item '" + item + "'");
    }
    out.push_back(x);
  }
  return out;
}

std::filesystem::path KeyValueConfig::get_path(const std::string& key,
                                               const std::filesystem::path& fallback) const {
  const std::string* v = find(key);
  std::filesystem::path p = v ? std::filesystem::path(*v) : fallback;
  if (p.empty() || p.is_absolute()) return p;
  return base_dir_ / p;
}

void KeyValueConfig::reject_unknown() const {
  std::string unknown;
  for (const auto& [key, value] : values_) {
    if (used_.contains(key)) continue;
    unknown += (unknown.empty() ? "" : ", ") + key + " (line " + std::to_string(lines_.at(key)) + ")";
  }
  if (!unknown.empty()) throw ConfigError(origin_ + ": unknown key(s): " + unknown);
}

}  // namespace anyshot
