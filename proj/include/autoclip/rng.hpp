#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace autoclip {

/// Counter-based deterministic generator (splitmix64). The internal counter
/// advances by a fixed odd gamma and each output is the finalizer of the
/// current counter value, so the n-th draw is a pure function of (seed, n).
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1), 53 mantissa bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform index in [0, n) via 128-bit multiply-shift.
  std::uint64_t next_index(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller: z = sqrt(-2 ln u1) * cos(2 pi u2),
  /// consuming exactly two uniform draws per call (no pair caching, so the
  /// draw count per sample is fixed and streams stay reproducible).
  double next_normal() {
    const double u1 = 1.0 - next_unit();  // (0, 1]
    const double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
};

/// Stream-key derivation: feeds each component through the splitmix64
/// finalizer so that (base, cell, replicate) triples map to well-separated
/// seeds. Changing any component changes the derived stream.
inline std::uint64_t derive_stream(std::uint64_t base, std::uint64_t cell,
                                   std::uint64_t replicate) {
  SplitMix64 a(base);
  SplitMix64 b(a.next_u64() ^ (cell * 0xd1342543de82ef95ULL));
  SplitMix64 c(b.next_u64() ^ (replicate * 0xaf251af3b0f025b5ULL));
  return c.next_u64();
}

}  // namespace autoclip
