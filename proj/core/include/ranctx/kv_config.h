#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace ranctx {

/// Flat `key = value` configuration with `#` comments.
///
/// Values are pulled by consumers with the typed getters; anything left
/// unconsumed is reported by RejectUnknown() with its source line, so a
/// typo in a config file fails loudly instead of silently using defaults.
class KvConfig {
 public:
  static KvConfig Parse(std::string_view text, const std::string& source);
  static KvConfig Load(const std::string& path);

  /// Applies a `key=value` override (e.g. from `--set`).
  void Set(std::string_view assignment);
  void Set(const std::string& key, const std::string& value);

  bool Has(const std::string& key) const;

  std::string GetString(const std::string& key, const std::string& fallback);
  double GetDouble(const std::string& key, double fallback);
  long long GetInt(const std::string& key, long long fallback);
  bool GetBool(const std::string& key, bool fallback);

  /// Throws a validation error naming the first unconsumed key.
  void RejectUnknown() const;

 private:
  struct Entry {
    std::string value;
    std::string origin;  // "file:line" or "--set"
    bool used = false;
  };
  const Entry* Find(const std::string& key);

  std::map<std::string, Entry> entries_;
};

}  // namespace ranctx
