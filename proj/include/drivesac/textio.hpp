#pragma once

#include <charconv>
#include <stdexcept>
#include <string>

namespace drivesac {

// Shortest decimal form that round-trips the exact double, so rewriting a
// file from identical state reproduces identical bytes.
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("format_double: to_chars failed");
  return std::string(buf, ptr);
}

}  // namespace drivesac
