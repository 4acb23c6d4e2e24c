#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace irview {

/// Ordered key=value store backing config files, runspecs and checkpoint metadata.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  /// Lines are `key=value`; blank lines and lines starting with '#' are skipped.
  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::filesystem::path& path);

  /// Applies `key=value`; throws DomainError on a malformed override.
  void apply_override(const std::string& assignment);

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void set(const std::string& key, double value);
  void set(const std::string& key, long long value);
  void set(const std::string& key, int value) { set(key, static_cast<long long>(value)); }
  void set(const std::string& key, const std::vector<int>& values);

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;

  /// Keys sharing `prefix.`, with the prefix stripped.
  KeyValueConfig subset(const std::string& prefix) const;
  void merge(const KeyValueConfig& other, const std::string& prefix = "");

  const std::map<std::string, std::string>& entries() const { return values_; }
  std::string to_string() const;

 private:
  std::map<std::string, std::string> values_;
};

/// Shortest text that parses back to the same double.
std::string format_double(double value);

}  // namespace irview
