#pragma once

// Text parsing and formatting helpers for the CSV-style formats. Doubles
// are formatted with the shortest representation that round-trips exactly.

#include <charconv>
#include <string>
#include <vector>

#include "t2v/errors.hpp"

namespace t2v::detail {

inline long parse_long(const std::string& text, const std::string& what,
                       const std::string& context) {
  long value = 0;
  const auto [ptr, ec] =
      std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw DataError(context + ": malformed " + what + " \"" + text + "\"");
  return value;
}

inline double parse_double(const std::string& text, const std::string& what,
                           const std::string& context) {
  double value = 0;
  const auto [ptr, ec] =
      std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw DataError(context + ": malformed " + what + " \"" + text + "\"");
  return value;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

/// Splits one CSV line on commas. No quoting; a trailing carriage return is
/// dropped.
inline std::vector<std::string> split_csv(const std::string& line) {
  std::string clean = line;
  if (!clean.empty() && clean.back() == '\r') clean.pop_back();
  std::vector<std::string> fields;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = clean.find(',', pos);
    if (comma == std::string::npos) {
      fields.push_back(clean.substr(pos));
      break;
    }
    fields.push_back(clean.substr(pos, comma - pos));
    pos = comma + 1;
  }
  return fields;
}

}  // namespace t2v::detail
