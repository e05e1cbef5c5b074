#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

namespace cmalab {

/// Round-trip-exact, locale-independent double formatting. All CSV output
/// goes through this so repeated runs are byte-identical.
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt_int(std::int64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(v));
  return buf;
}

inline constexpr std::string_view kArtifactVersion = "0.1.0";

}  // namespace cmalab
