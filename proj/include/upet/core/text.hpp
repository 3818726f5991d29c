#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "upet/core/errors.hpp"

// Small parsing helpers shared by the text formats (config files, checkpoint
// headers, sidecars). All of them reject trailing garbage.

namespace upet::text {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::int64_t parse_int(std::string_view s, const std::string& what) {
  const std::string t = trim(s);
  std::int64_t v = 0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || p != t.data() + t.size()) {
    throw ValueError(what + ": expected an integer, got '" + t + "'");
  }
  return v;
}

inline std::uint64_t parse_uint(std::string_view s, const std::string& what) {
  const std::string t = trim(s);
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || p != t.data() + t.size()) {
    throw ValueError(what + ": expected a non-negative integer, got '" + t + "'");
  }
  return v;
}

inline double parse_double(std::string_view s, const std::string& what) {
  const std::string t = trim(s);
  double v = 0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || p != t.data() + t.size()) {
    throw ValueError(what + ": expected a number, got '" + t + "'");
  }
  return v;
}

inline bool parse_bool(std::string_view s, const std::string& what) {
  const std::string t = trim(s);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ValueError(what + ": expected true/false, got '" + t + "'");
}

}  // namespace upet::text
