#pragma once

#include <cstdint>
#include <random>

namespace dendrite::detail {

// Bit-exact stream over mt19937_64. Distributions are derived by hand so the
// output does not depend on the standard library's distribution algorithms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Two-bit direction draws, 32 per engine call.
  int direction4() {
    if (remaining_ == 0) {
      pool_ = engine_();
      remaining_ = 32;
    }
    int d = static_cast<int>(pool_ & 3u);
    pool_ >>= 2;
    --remaining_;
    return d;
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t pool_ = 0;
  int remaining_ = 0;
};

}  // namespace dendrite::detail
