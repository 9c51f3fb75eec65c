#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <initializer_list>

namespace regbench {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Order-sensitive hash of a key tuple; used to derive independent seeds.
constexpr std::uint64_t hash_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x243F6A8885A308D3ull;
  for (auto p : parts) h = mix64(h ^ mix64(p));
  return h;
}

/// Seed of ensemble member `member` under `base_seed`.
constexpr std::uint64_t member_seed(std::uint64_t base_seed, std::uint64_t member) {
  return hash_key({base_seed, member});
}

/// Standard normal deviate addressed by a 64-bit counter (Box-Muller on two
/// derived uniforms). Same key, same value, regardless of evaluation order.
inline double counter_normal(std::uint64_t key) {
  const std::uint64_t a = mix64(key);
  const std::uint64_t b = mix64(a ^ 0xD1B54A32D192ED03ull);
  const double u1 = (double(a >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
  const double u2 = double(b >> 11) * 0x1.0p-53;          // [0, 1)
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace regbench
