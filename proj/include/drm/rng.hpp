#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace drm {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// A generator is identified by a 64-bit key (the seed) and a 64-bit stream
/// id. Output block n is Philox(key, counter = {n, stream}), so every
/// (seed, stream) pair yields an independent, reproducible sequence no matter
/// which thread consumes it. Streams used by the library:
///   - sampler chain c: key = seed + c, stream 0
///   - per-chain momentum/tree decisions share that stream
///   - predictive noise: key = seed, stream 1
///   - synthetic weather: key = seed, stream 2; random tariff events: stream 3
///   - synthetic population consumer i: key = seed, stream 1000 + i
/// Satisfies UniformRandomBitGenerator with 32-bit output.
class Philox4x32 {
public:
  using result_type = std::uint32_t;

  explicit Philox4x32(std::uint64_t seed = 0, std::uint64_t stream = 0)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_(stream) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (index_ == 4) {
      block_ = generate(block_counter_++);
      index_ = 0;
    }
    return block_[index_++];
  }

  /// Uniform double in (0, 1), 53 bits.
  double uniform() {
    const std::uint64_t hi = (*this)() >> 5;  // 27 bits
    const std::uint64_t lo = (*this)() >> 6;  // 26 bits
    return (static_cast<double>((hi << 26) | lo) + 0.5) * 0x1.0p-53;
  }

  std::uint64_t counter() const { return block_counter_; }

  /// The raw bijection: ten Philox rounds of `ctr` under `key`.
  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                            std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{0xD2511F53} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{0xCD9E8D57} * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
      key[0] += 0x9E3779B9;
      key[1] += 0xBB67AE85;
    }
    return ctr;
  }

private:
  std::array<std::uint32_t, 4> generate(std::uint64_t n) const {
    return block({static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(n >> 32),
                  static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)},
                 key_);
  }

  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
  std::uint64_t block_counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int index_ = 4;
};

}  // namespace drm
