#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace icell {

// Error categories used across the library. All map onto std::exception so
// callers can catch broadly at the CLI boundary.
class shape_error : public std::invalid_argument {
 public:
  explicit shape_error(const std::string& msg) : std::invalid_argument(msg) {}
};

class value_error : public std::invalid_argument {
 public:
  explicit value_error(const std::string& msg) : std::invalid_argument(msg) {}
};

class io_error : public std::runtime_error {
 public:
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check_shape(bool ok, const std::string& msg) {
  if (!ok) throw shape_error(msg);
}

inline void check_value(bool ok, const std::string& msg) {
  if (!ok) throw value_error(msg);
}

// FNV-1a, used for config content hashes. Stable across platforms.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace icell
