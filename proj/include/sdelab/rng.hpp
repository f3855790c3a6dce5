#pragma once

// Counter-based normals: Philox4x32-10 keyed by the seed, counter built from
// (step, stream tag, block, path). Any draw is addressable without state.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace sdelab::rng {

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

inline Counter philox4x32(Counter c, Key k) {
  constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
  constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t{M0} * c[0];
    const std::uint64_t p1 = std::uint64_t{M1} * c[2];
    c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
         static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
    k[0] += W0;
    k[1] += W1;
  }
  return c;
}

enum class Stream : std::uint32_t { brownian = 0, initial = 1, jitter = 2, permutation = 3 };

/// Uniform in (0, 1): 52 bits from two words, offset by half a step.
inline double to_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (std::uint64_t{hi} << 20) | (std::uint64_t{lo} >> 12);
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-52;
}

/// Stateless generator for one (seed, stream, path).
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, Stream stream, std::uint64_t path)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        tag_(static_cast<std::uint32_t>(stream) << 24),
        path_{static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32)} {}

  /// Four 32-bit words for (step, block); block < 2^24.
  Counter block(std::uint32_t step, std::uint32_t block) const {
    return philox4x32({step, tag_ | (block & 0xFFFFFFu), path_[0], path_[1]}, key_);
  }

  /// Two uniforms in (0,1) for (step, block).
  std::array<double, 2> uniforms(std::uint32_t step, std::uint32_t block_index) const {
    const Counter w = block(step, block_index);
    return {to_unit(w[0], w[1]), to_unit(w[2], w[3])};
  }

  /// Fills `out` with standard normals for one step (Box-Muller, two per block).
  void normals(std::uint32_t step, std::span<double> out) const {
    for (std::size_t i = 0; i < out.size(); i += 2) {
      const auto u = uniforms(step, static_cast<std::uint32_t>(i / 2));
      const double r = std::sqrt(-2.0 * std::log(u[0]));
      const double th = 2.0 * std::numbers::pi * u[1];
      out[i] = r * std::cos(th);
      if (i + 1 < out.size()) out[i + 1] = r * std::sin(th);
    }
  }

 private:
  Key key_;
  std::uint32_t tag_;
  std::array<std::uint32_t, 2> path_;
};

}  // namespace sdelab::rng
