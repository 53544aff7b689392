#pragma once

#include <cstdint>
#include <string_view>

namespace petfuse {

// splitmix64: tiny, well-distributed, fully portable generator. Used for all
// engine randomness so results are bitwise identical across platforms and
// independent of libstdc++ distribution internals.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Deterministic key derivation: fold `b` into the stream keyed by `a`.
inline std::uint64_t mix_keys(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a;
  std::uint64_t r = splitmix64_next(s);
  s = r ^ b;
  return splitmix64_next(s);
}

inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Sequential stream of doubles in [0, 1).
class NoiseStream {
public:
  explicit NoiseStream(std::uint64_t key) : state_(key) {}

  double next_unit() {
    const std::uint64_t bits = splitmix64_next(state_);
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
  }

private:
  std::uint64_t state_;
};

}  // namespace petfuse
