/// @file
/// Shortest-round-trip decimal formatting for doubles: the printed text is
/// the shortest string that parses back to the identical value.

#pragma once

#include <charconv>
#include <string>

namespace miliom {
namespace detail {

inline std::string double_text(double value) {
  char buffer[32];
  const std::to_chars_result r =
      std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, r.ptr);
}

}  // namespace detail
}  // namespace miliom
