#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace vinet {

/// Ordered key=value text with '#' comments. Used for training configs on
/// disk and for the architecture block embedded in checkpoints.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text);
  static KeyValues load(const std::string& path);

  std::string str() const;

  bool has(const std::string& key) const;
  /// Throws FormatError when the key is absent or the value malformed.
  std::string get_str(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  void set(const std::string& key, const std::string& value);
  void set_int(const std::string& key, std::int64_t value);
  void set_double(const std::string& key, double value);

  const std::vector<std::pair<std::string, std::string>>& items() const {
    return items_;
  }

 private:
  const std::string* find(const std::string& key) const;
  std::vector<std::pair<std::string, std::string>> items_;
};

/// Split "a,b,c" into trimmed tokens.
std::vector<std::string> split_csv(const std::string& s);

}  // namespace vinet
