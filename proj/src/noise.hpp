#pragma once

// Counter-based random numbers: every draw is a hash of its coordinates, so
// streams can be regenerated at any index without carrying generator state.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace pieeg::noise {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t hash(std::uint64_t seed, std::uint64_t stream, std::uint64_t lane,
                          std::uint64_t index) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ stream);
  h = splitmix64(h ^ lane);
  return splitmix64(h ^ index);
}

// Uniform in (0, 1).
inline double to_unit(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

inline double uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t lane,
                      std::uint64_t index) {
  return to_unit(hash(seed, stream, lane, index));
}

// Standard normal via Box-Muller on two hashed uniforms.
inline double gaussian(std::uint64_t seed, std::uint64_t stream, std::uint64_t lane,
                       std::uint64_t index) {
  const std::uint64_t h = hash(seed, stream, lane, index);
  const double u1 = to_unit(h);
  const double u2 = to_unit(splitmix64(h));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace pieeg::noise
