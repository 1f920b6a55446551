#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "itnet/io.hpp"

namespace itnet {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat `key=value` text. Lines starting with '#' are comments.
using KeyValues = std::map<std::string, std::string>;

namespace detail {
inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}
}  // namespace detail

inline KeyValues parse_key_values(std::string_view text, const std::string& origin = "config") {
  KeyValues kv;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = detail::trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const auto key = std::string(detail::trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    kv[key] = std::string(detail::trim(line.substr(eq + 1)));
  }
  return kv;
}

inline KeyValues load_key_values(const std::filesystem::path& path) {
  return parse_key_values(read_file(path), path.string());
}

inline std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

// Shortest decimal text that parses back to the same double.
inline std::string format_real(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

inline std::string format_real(float v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

template <typename V>
V parse_value(std::string_view text, std::string_view key) {
  V v{};
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) {
    throw ConfigError("invalid value '" + std::string(text) + "' for key " + std::string(key));
  }
  return v;
}

template <>
inline bool parse_value<bool>(std::string_view text, std::string_view key) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("invalid boolean '" + std::string(text) + "' for key " + std::string(key));
}

inline std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  while (true) {
    const auto p = text.find(sep);
    out.emplace_back(detail::trim(text.substr(0, p)));
    if (p == std::string_view::npos) break;
    text = text.substr(p + 1);
  }
  return out;
}

// Reads typed values out of a KeyValues map and remembers which keys were used,
// so leftovers can be rejected as typos.
class ConfigReader {
 public:
  explicit ConfigReader(const KeyValues& kv) : kv_(kv) {}

  template <typename V>
  void read(const std::string& key, V& target) {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return;
    used_.insert(key);
    target = parse_value<V>(it->second, key);
  }

  void read(const std::string& key, std::string& target) {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return;
    used_.insert(key);
    target = it->second;
  }

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  const std::string* raw(const std::string& key) {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }

  // Keys that start with `prefix` and were not consumed.
  std::vector<std::string> unused(std::string_view prefix = {}) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : kv_)
      if (!used_.count(k) && k.rfind(prefix, 0) == 0) out.push_back(k);
    return out;
  }

  void reject_unused(std::string_view prefix = {}) const {
    const auto left = unused(prefix);
    if (left.empty()) return;
    std::string msg = "unknown configuration key";
    msg += left.size() > 1 ? "s:" : ":";
    for (const auto& k : left) msg += " " + k;
    throw ConfigError(msg);
  }

 private:
  const KeyValues& kv_;
  std::set<std::string> used_;
};

}  // namespace itnet
