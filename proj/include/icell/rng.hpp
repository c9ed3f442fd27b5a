#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <sstream>
#include <string>

#include "icell/common.hpp"

namespace icell {

// Deterministic random stream. Uniform and normal variates are derived from
// the raw mt19937_64 output with our own transforms so that draws are
// bit-identical across standard library implementations and checkpoints stay
// portable. std::*_distribution is implementation-defined and deliberately
// avoided here.
class RandomStream {
 public:
  RandomStream() : RandomStream(0) {}
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // i in [0, n)
  std::uint64_t below(std::uint64_t n) {
    // modulo bias is negligible for our n << 2^64
    return engine_() % n;
  }

  // Standard normal via Box-Muller; the spare value is cached and serialized.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  std::string serialize() const {
    std::ostringstream os;
    // the spare travels as its bit pattern to keep the round trip exact
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(spare_));
    std::memcpy(&bits, &spare_, sizeof(bits));
    os << engine_ << " " << (has_spare_ ? 1 : 0) << " " << bits;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    int flag = 0;
    std::uint64_t bits = 0;
    is >> engine_ >> flag >> bits;
    if (is.fail()) throw io_error("RandomStream: bad serialized state");
    has_spare_ = flag != 0;
    std::memcpy(&spare_, &bits, sizeof(bits));
  }

  bool operator==(const RandomStream& o) const {
    return serialize() == o.serialize();
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64, used to derive independent per-item seeds from a base seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t item) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (item + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace icell
