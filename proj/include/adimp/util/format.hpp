// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <string>
#include <system_error>

namespace adimp::util {

// Shortest round-trip decimal form of a double. Deterministic: the same
// value always prints the same bytes, so repeated runs produce bit-identical
// CSV files.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace adimp::util
