#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>

namespace cyctr {

// Counter-based generator: every output is a hash of (key, counter), so
// streams can be split by label without sharing state and draws are
// reproducible across platforms.
class CounterRng {
 public:
  explicit CounterRng(uint64_t seed, uint64_t stream = 0)
      : key_(mix(seed ^ 0x8f5c'28f5'c28f'5c29ull, stream)) {}

  uint64_t next() { return mix(key_, counter_++); }

  // Child generator whose stream is determined by (parent key, label).
  CounterRng split(uint64_t label) const {
    CounterRng child(0);
    child.key_ = mix(key_, label ^ 0xa076'1d64'78bd'642full);
    child.counter_ = 0;
    return child;
  }
  CounterRng split(std::string_view label) const { return split(fnv1a(label)); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  uint64_t bounded(uint64_t n) { return next() % n; }

  // Box-Muller; consumes two draws per call, no cached spare.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  static uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf2'9ce4'8422'2325ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100'0000'01b3ull;
    }
    return h;
  }

 private:
  static uint64_t mix(uint64_t a, uint64_t b) {
    // splitmix64 finalizer over the combined words
    uint64_t z = a + 0x9e37'79b9'7f4a'7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58'476d'1ce4'e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d0'49bb'1331'11ebull;
    return z ^ (z >> 31);
  }

  uint64_t key_;
  uint64_t counter_ = 0;
};

}  // namespace cyctr
