#pragma once

// Philox4x32-10 counter-based generator (Salmon et al., SC'11) and the
// stream addressing used for noise synthesis. A stream is identified by
// (purpose tag, realization, site); the k-th 128-bit block of a stream is
// philox(key = master seed, counter = {k, realization, site, tag}), so
// distinct streams can never overlap and any block is addressable directly.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "noisydiff/simd_math.hpp"

namespace noisydiff {

inline constexpr std::uint64_t kPhiloxM0 = 0xD2511F53u;
inline constexpr std::uint64_t kPhiloxM1 = 0xCD9E8D57u;
inline constexpr std::uint64_t kPhiloxW0 = 0x9E3779B9u;
inline constexpr std::uint64_t kPhiloxW1 = 0xBB67AE85u;

using PhiloxBlock = std::array<std::uint32_t, 4>;

/// One Philox4x32-10 evaluation. 32-bit words are carried in 64-bit lanes so
/// that loops over many counters vectorize with 32x32->64 multiplies.
inline PhiloxBlock philox4x32(PhiloxBlock ctr, std::uint64_t seed) noexcept {
  constexpr std::uint64_t lo = 0xFFFFFFFFull;
  std::uint64_t c0 = ctr[0], c1 = ctr[1], c2 = ctr[2], c3 = ctr[3];
  std::uint64_t k0 = seed & lo, k1 = seed >> 32;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = kPhiloxM0 * c0;
    const std::uint64_t p1 = kPhiloxM1 * c2;
    const std::uint64_t n0 = (p1 >> 32) ^ c1 ^ k0;
    const std::uint64_t n2 = (p0 >> 32) ^ c3 ^ k1;
    c1 = p1 & lo;
    c3 = p0 & lo;
    c0 = n0;
    c2 = n2;
    k0 = (k0 + kPhiloxW0) & lo;
    k1 = (k1 + kPhiloxW1) & lo;
  }
  return {static_cast<std::uint32_t>(c0), static_cast<std::uint32_t>(c1),
          static_cast<std::uint32_t>(c2), static_cast<std::uint32_t>(c3)};
}

enum class StreamTag : std::uint32_t { LatticeNoise = 1, DephasingSample = 2 };

struct StreamId {
  std::uint32_t realization = 0;
  std::uint32_t site = 0;
  friend bool operator==(const StreamId&, const StreamId&) = default;
};

/// Standard normal pair from one Philox block via Box-Muller.
inline void box_muller(const PhiloxBlock& b, double& z0, double& z1) noexcept {
  const std::uint64_t a = (std::uint64_t{b[1]} << 32) | b[0];
  const std::uint64_t c = (std::uint64_t{b[3]} << 32) | b[2];
  // u1 in (0, 1], u2 in [0, 1), both with 53 random bits
  const double u1 = (static_cast<double>(static_cast<std::int64_t>(a >> 11)) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(static_cast<std::int64_t>(c >> 11)) * 0x1.0p-53;
  const double r = __builtin_sqrt(-2.0 * simd::log_positive(u1));
  double s, co;
  simd::sincos_turns(u2, s, co);
  z0 = r * co;
  z1 = r * s;
}

/// Normals for many streams advancing in lock step. Draw n of every stream is
/// the (n % 2) half of Box-Muller block n / 2, independent of how many other
/// streams are generated alongside it.
class NormalStreams {
 public:
  NormalStreams() = default;
  NormalStreams(std::uint64_t seed, StreamTag tag, std::span<const StreamId> ids)
      : seed_(seed), tag_(static_cast<std::uint32_t>(tag)) {
    realization_.reserve(ids.size());
    site_.reserve(ids.size());
    for (const auto& id : ids) {
      realization_.push_back(id.realization);
      site_.push_back(id.site);
    }
    spare_.assign(ids.size(), 0.0);
  }

  std::size_t size() const noexcept { return site_.size(); }
  std::uint64_t draws() const noexcept { return draw_; }

  /// Writes the next normal of every stream into out (size() entries).
  void next(std::span<double> out) {
    const std::size_t n = size();
    double* __restrict dst = out.data();
    double* __restrict spare = spare_.data();
    if ((draw_ & 1) == 0) {
      const auto block = static_cast<std::uint32_t>(draw_ >> 1);
      const std::uint32_t* __restrict real = realization_.data();
      const std::uint32_t* __restrict site = site_.data();
      const std::uint32_t tag = tag_;
      const std::uint64_t seed = seed_;
      for (std::size_t s = 0; s < n; ++s) {
        const PhiloxBlock b = philox4x32({block, real[s], site[s], tag}, seed);
        double z0, z1;
        box_muller(b, z0, z1);
        dst[s] = z0;
        spare[s] = z1;
      }
    } else {
      for (std::size_t s = 0; s < n; ++s) dst[s] = spare[s];
    }
    ++draw_;
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint32_t tag_ = 0;
  std::uint64_t draw_ = 0;
  std::vector<std::uint32_t> realization_;
  std::vector<std::uint32_t> site_;
  std::vector<double> spare_;
};

}  // namespace noisydiff
