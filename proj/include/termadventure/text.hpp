#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace ta {

inline std::string_view ltrim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n\f\v");
  return first == std::string_view::npos ? std::string_view{} : s.substr(first);
}

inline std::string_view rtrim(std::string_view s) {
  const auto last = s.find_last_not_of(" \t\r\n\f\v");
  return last == std::string_view::npos ? std::string_view{} : s.substr(0, last + 1);
}

inline std::string_view trim(std::string_view s) { return rtrim(ltrim(s)); }

inline bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

/// Splits on runs of ASCII whitespace; no empty tokens.
inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto start = s.find_first_not_of(" \t\r\n\f\v", pos);
    if (start == std::string_view::npos) break;
    const auto end = s.find_first_of(" \t\r\n\f\v", start);
    tokens.emplace_back(s.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
    pos = end == std::string_view::npos ? s.size() : end;
  }
  return tokens;
}

}  // namespace ta
