#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

namespace vps {

// Flat UTF-8 "key = value" text with dotted keys; '#' starts a comment.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& source);
  static KeyValues load(const std::string& path);

  bool has(const std::string& key) const { return values_.contains(key); }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  // Typed getters throw ConfigError naming the source and key on bad values.
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;

  // Keys not in `known`, for rejecting typos.
  std::set<std::string> unknown_keys(const std::set<std::string>& known) const;
  const std::map<std::string, std::string>& entries() const { return values_; }
  const std::string& source() const { return source_; }

 private:
  std::map<std::string, std::string> values_;
  std::string source_;
};

// Shortest text that parses back to exactly the same double.
std::string format_double(double v);

}  // namespace vps
