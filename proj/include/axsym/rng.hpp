#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace axsym {

/// Philox4x32-10 counter-based generator. Output blocks are a pure function
/// of (key, counter), so any (seed, stream) pair names a reproducible
/// sequence regardless of evaluation order or thread count. Counter layout:
/// words 0-1 hold the running 64-bit block index, words 2-3 the stream id.
class Philox {
 public:
  Philox(std::uint64_t seed, std::uint64_t stream)
      : key0_(static_cast<std::uint32_t>(seed)),
        key1_(static_cast<std::uint32_t>(seed >> 32)),
        stream_(stream) {}

  static std::array<std::uint32_t, 4> block(std::uint64_t seed,
                                            std::uint64_t stream,
                                            std::uint64_t index) {
    std::array<std::uint32_t, 4> x = {
        static_cast<std::uint32_t>(index),
        static_cast<std::uint32_t>(index >> 32),
        static_cast<std::uint32_t>(stream),
        static_cast<std::uint32_t>(stream >> 32)};
    std::uint32_t k0 = static_cast<std::uint32_t>(seed);
    std::uint32_t k1 = static_cast<std::uint32_t>(seed >> 32);
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        k0 += 0x9E3779B9u;
        k1 += 0xBB67AE85u;
      }
      const std::uint64_t p0 = std::uint64_t(0xD2511F53u) * x[0];
      const std::uint64_t p1 = std::uint64_t(0xCD9E8D57u) * x[2];
      const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
      const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
      x = {hi1 ^ x[1] ^ k0, lo1, hi0 ^ x[3] ^ k1, lo0};
    }
    return x;
  }

  std::uint32_t next_u32() {
    if (pos_ == 4) {
      std::uint64_t seed =
          std::uint64_t(key0_) | (std::uint64_t(key1_) << 32);
      buf_ = block(seed, stream_, block_++);
      pos_ = 0;
    }
    return buf_[pos_++];
  }

  /// 53-bit uniform in [0, 1).
  double uniform() {
    const std::uint32_t a = next_u32();
    const std::uint32_t b = next_u32();
    const std::uint64_t r = (std::uint64_t(b) << 32) | a;
    return double(r >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; pairs are cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(t);
    has_cached_ = true;
    return r * std::cos(t);
  }

 private:
  std::uint32_t key0_, key1_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buf_ = {0, 0, 0, 0};
  int pos_ = 4;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

/// Stream ids are namespaced by purpose so independent consumers of one seed
/// never collide: coefficient draws use one stream per wavenumber m, nugget
/// noise one stream per point index.
enum class StreamKind : std::uint32_t {
  kCoefficients = 1,
  kNugget = 2,
  kGeneric = 3,
};

inline std::uint64_t derive_stream(StreamKind kind, std::uint64_t index) {
  return (std::uint64_t(static_cast<std::uint32_t>(kind)) << 56) |
         (index & ((std::uint64_t(1) << 56) - 1));
}

}  // namespace axsym
