#include "vsparse/config_text.hpp"

#include <charconv>
#include <cmath>

namespace vsparse {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, std::string_view v) {
  N out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config: bad value for " + key + ": '" + std::string(v) + "'");
  }
  return out;
}

}  // namespace

KeyValueText KeyValueText::parse(std::string_view text) {
  KeyValueText kv;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config: line " + std::to_string(line_no) + " has no '='");
    }
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError("config: line " + std::to_string(line_no) + " has an empty key");
    if (kv.contains(key)) throw ConfigError("config: duplicate key " + key);
    kv.items_.emplace_back(key, std::string(trim(line.substr(eq + 1))));
  }
  return kv;
}

void KeyValueText::set(const std::string& key, std::string value) {
  for (auto& [k, v] : items_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  items_.emplace_back(key, std::move(value));
}

void KeyValueText::set(const std::string& key, double value) { set(key, format_double(value)); }
void KeyValueText::set(const std::string& key, std::int64_t value) { set(key, std::to_string(value)); }
void KeyValueText::set(const std::string& key, std::uint64_t value) { set(key, std::to_string(value)); }

const std::string* KeyValueText::find(const std::string& key) const {
  for (const auto& [k, v] : items_) {
    if (k == key) return &v;
  }
  return nullptr;
}

std::optional<std::string> KeyValueText::get_string(const std::string& key) const {
  const std::string* v = find(key);
  if (!v) return std::nullopt;
  return *v;
}

std::optional<double> KeyValueText::get_double(const std::string& key) const {
  const std::string* v = find(key);
  if (!v) return std::nullopt;
  const double d = parse_number<double>(key, *v);
  if (!std::isfinite(d)) throw ConfigError("config: non-finite value for " + key);
  return d;
}

std::optional<std::int64_t> KeyValueText::get_int(const std::string& key) const {
  const std::string* v = find(key);
  if (!v) return std::nullopt;
  return parse_number<std::int64_t>(key, *v);
}

std::optional<std::uint64_t> KeyValueText::get_uint(const std::string& key) const {
  const std::string* v = find(key);
  if (!v) return std::nullopt;
  return parse_number<std::uint64_t>(key, *v);
}

std::optional<bool> KeyValueText::get_bool(const std::string& key) const {
  const std::string* v = find(key);
  if (!v) return std::nullopt;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  throw ConfigError("config: bad boolean for " + key + ": '" + *v + "'");
}

std::optional<std::vector<std::int64_t>> KeyValueText::get_int_list(const std::string& key) const {
  const std::string* v = find(key);
  if (!v) return std::nullopt;
  std::vector<std::int64_t> out;
  std::string_view rest = *v;
  while (true) {
    const auto comma = rest.find(',');
    out.push_back(parse_number<std::int64_t>(key, trim(rest.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  return out;
}

std::string KeyValueText::to_text() const {
  std::string out;
  for (const auto& [k, v] : items_) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

}  // namespace vsparse
