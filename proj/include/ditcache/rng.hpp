#pragma once

#include <cstdint>
#include <string_view>

namespace ditcache {

// Deterministic 64-bit PRNG: xoshiro256** seeded through splitmix64.
// Sub-streams are derived per (purpose, index) so that training data,
// calibration samples and evaluation samples draw from disjoint streams
// of one user-facing seed. The integer stream is platform independent;
// normal() goes through libm (log/cos/sqrt), which is bit-stable per
// platform but not guaranteed across libm implementations.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "splitmix64+xoshiro256starstar";

  explicit Rng(uint64_t seed);

  // Independent stream for (seed, purpose, index).
  static Rng substream(uint64_t seed, std::string_view purpose, uint64_t index);

  uint64_t next_u64();
  double next_double();                      // uniform [0,1), 53-bit
  float next_float();                        // uniform [0,1), 24-bit
  float uniform(float lo, float hi);         // uniform [lo,hi)
  int next_int(int lo, int hi);              // uniform integer in [lo,hi]
  float normal();                            // standard Gaussian (Box-Muller)

 private:
  uint64_t s_[4];
};

// FNV-1a 64-bit hash; used for stream derivation and file checksums.
uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull);
uint64_t fnv1a64(std::string_view s);

}  // namespace ditcache
