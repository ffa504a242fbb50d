#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vsparse {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Ordered `key=value` lines. Blank lines and lines starting with '#' are
/// ignored; surrounding whitespace is trimmed.
class KeyValueText {
 public:
  static KeyValueText parse(std::string_view text);

  void set(const std::string& key, std::string value);
  void set(const std::string& key, double value);
  void set(const std::string& key, std::int64_t value);
  void set(const std::string& key, std::uint64_t value);
  void set(const std::string& key, int value) { set(key, static_cast<std::int64_t>(value)); }
  void set(const std::string& key, std::uint32_t value) { set(key, static_cast<std::uint64_t>(value)); }
  void set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }

  bool contains(const std::string& key) const { return find(key) != nullptr; }
  const std::string* find(const std::string& key) const;

  std::optional<std::string> get_string(const std::string& key) const;
  std::optional<double> get_double(const std::string& key) const;
  std::optional<std::int64_t> get_int(const std::string& key) const;
  std::optional<std::uint64_t> get_uint(const std::string& key) const;
  std::optional<bool> get_bool(const std::string& key) const;
  std::optional<std::vector<std::int64_t>> get_int_list(const std::string& key) const;

  const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }
  std::string to_text() const;

 private:
  std::vector<std::pair<std::string, std::string>> items_;
};

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

}  // namespace vsparse
