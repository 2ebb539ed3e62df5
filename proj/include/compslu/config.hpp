#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace compslu {

/// Flat `key = value` configuration. `#` starts a comment; `include = path`
/// splices another file (relative to the including file) at that point.
/// Later assignments override earlier ones.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse_file(const std::filesystem::path& path);
  static KeyValueConfig parse_string(const std::string& text,
                                     const std::filesystem::path& base_dir = ".");

  void set(const std::string& key, const std::string& value);
  /// Applies `key=value` overrides in order.
  void apply_overrides(const std::vector<std::string>& assignments);
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Keys starting with `prefix`, in key order.
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const;

  /// Throws ConfigError naming any key never read through a getter.
  void require_all_used() const;

  const std::map<std::string, std::string>& values() const { return values_; }
  /// Sorted `key=value` lines; parsing the result reproduces the config.
  std::string serialize() const;
  std::uint64_t hash() const;

 private:
  void parse_into(const std::string& text, const std::filesystem::path& base_dir,
                  std::vector<std::filesystem::path>& stack);
  const std::string* lookup(const std::string& key) const;

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace compslu
