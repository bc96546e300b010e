#pragma once

#include <charconv>
#include <string>

namespace mbi {

/// Shortest decimal text that round-trips to the same double.
inline std::string format_real(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

}  // namespace mbi
