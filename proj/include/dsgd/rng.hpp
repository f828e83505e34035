#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace dsgd {

// Philox4x32-10 (Salmon et al., SC'11). A keyed bijection on 128-bit counters:
// every draw is a pure function of (key, counter), so results do not depend on
// evaluation order or on how runs are spread across threads.
namespace philox {

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& lo, std::uint32_t& hi) {
  const std::uint64_t p = std::uint64_t(a) * b;
  lo = std::uint32_t(p);
  hi = std::uint32_t(p >> 32);
}

inline Counter round(const Counter& c, const Key& k) {
  std::uint32_t lo0, hi0, lo1, hi1;
  mulhilo(0xD2511F53u, c[0], lo0, hi0);
  mulhilo(0xCD9E8D57u, c[2], lo1, hi1);
  return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

inline Counter generate(Counter c, Key k) {
  for (int r = 0; r < 10; ++r) {
    if (r > 0) {
      k[0] += 0x9E3779B9u;
      k[1] += 0xBB67AE85u;
    }
    c = round(c, k);
  }
  return c;
}

}  // namespace philox

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Draw domains. Different purposes never share random numbers even when
/// they share (seed, stream id, t, k).
enum class Purpose : std::uint32_t { Noise = 1, Minibatch = 2, Data = 3, Estimate = 4 };

/// Counter-based random stream identified by (seed, stream id, purpose).
/// Draws are addressed by (t, k): time step and client index.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream_id, Purpose purpose = Purpose::Noise) {
    const std::uint64_t h =
        splitmix64(splitmix64(splitmix64(seed) ^ stream_id) ^ std::uint64_t(purpose));
    key_ = {std::uint32_t(h), std::uint32_t(h >> 32)};
  }

  philox::Counter block(std::uint64_t t, std::uint32_t k, std::uint32_t lane) const {
    return philox::generate({lane, k, std::uint32_t(t), std::uint32_t(t >> 32)}, key_);
  }

  /// Uniforms in [0, 1) with 53-bit resolution.
  void uniforms(std::uint64_t t, std::uint32_t k, std::span<double> out) const {
    std::uint32_t lane = 0;
    for (std::size_t i = 0; i < out.size(); i += 2, ++lane) {
      const auto b = block(t, k, lane);
      out[i] = to_unit(b[0], b[1]);
      if (i + 1 < out.size()) out[i + 1] = to_unit(b[2], b[3]);
    }
  }

  /// Standard normals by Box-Muller; both outputs of each pair are used.
  void normals(std::uint64_t t, std::uint32_t k, std::span<double> out) const {
    std::uint32_t lane = 0;
    for (std::size_t i = 0; i < out.size(); i += 2, ++lane) {
      const auto b = block(t, k, lane);
      const double u1 = 1.0 - to_unit(b[0], b[1]);  // (0, 1]
      const double u2 = to_unit(b[2], b[3]);
      const double r = std::sqrt(-2.0 * std::log(u1));
      const double phase = 2.0 * std::numbers::pi * u2;
      out[i] = r * std::cos(phase);
      if (i + 1 < out.size()) out[i + 1] = r * std::sin(phase);
    }
  }

  static double to_unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = (std::uint64_t(hi >> 5) << 26) | std::uint64_t(lo >> 6);
    return double(bits) * 0x1.0p-53;
  }

 private:
  philox::Key key_{};
};

}  // namespace dsgd
