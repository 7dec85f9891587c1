#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace efoent {

// Deterministic splittable RNG (splitmix64 core). The standard <random>
// distributions are implementation-defined, so datasets and training runs
// would not be reproducible across toolchains; this generator is
// byte-for-byte stable everywhere.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Unbiased integer in [0, bound). bound must be > 0.
  uint64_t below(uint64_t bound) {
    // Rejection sampling over the top of the range keeps the draw unbiased.
    uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  // Uniform double in [0, 1) with 53 bits of precision.
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller (one value per call; no cached spare so
  // splitting stays stateless).
  double next_normal() {
    double u1, u2;
    do {
      u1 = next_double();
    } while (u1 <= 0.0);
    u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  // Derive an independent stream; used to give every (type, index) sample and
  // every (step, slot) dropout mask its own generator so parallel and serial
  // execution produce identical results.
  Rng split(uint64_t stream) const {
    Rng child(state_ ^ (0xa0761d6478bd642full + stream * 0xe7037ed1a0b428dbull));
    child.next_u64();
    return child;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

}  // namespace efoent
