#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace anyshot {

// Line-based "key = value" file. '#' starts a comment, keys may be dotted
// ("loss.lambda_aenc"). Every getter marks its key as used so leftovers can
// be reported as unknown.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool contains(const std::string& key) const;
  const std::filesystem::path& base_dir() const { return base_dir_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::string require_string(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  std::uint64_t require_uint(const std::string& key) const;
  bool get_bool(const std::string& key, bool fallback) const;
  // Comma-separated.
  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& fallback) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const;
  // Relative paths resolve against the config file's directory.
  std::filesystem::path get_path(const std::string& key, const std::filesystem::path& fallback) const;

  // Throws ConfigError naming every key no getter asked for.
  void reject_unknown() const;

 private:
  const std::string* find(const std::string& key) const;

  std::map<std::string, std::string> values_;
  std::map<std::string, std::size_t> lines_;
  std::string origin_;
  std::filesystem::path base_dir_;
  mutable std::set<std::string> used_;
};

}  // namespace anyshot
