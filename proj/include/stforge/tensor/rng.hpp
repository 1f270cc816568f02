#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace stforge {

/// Philox4x32-10 counter-based generator.
///
/// A stream is identified by (seed, stream_id); the 128-bit counter is
/// (block index, stream_id). Output depends only on those values, so two
/// streams built from the same pair produce the same sequence on every
/// platform. Floating-point draws use only integer arithmetic and exact
/// scaling, never library transcendental functions.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : key_{static_cast<std::uint32_t>(seed),
             static_cast<std::uint32_t>(seed >> 32)},
        stream_id_(stream_id) {}

  std::uint64_t seed() const {
    return static_cast<std::uint64_t>(key_[0]) |
           (static_cast<std::uint64_t>(key_[1]) << 32);
  }
  std::uint64_t stream_id() const { return stream_id_; }

  /// Independent child stream; deterministic in (parent seed, parent stream, tag).
  RngStream fork(std::uint64_t tag) const {
    return RngStream(seed(), mix64(stream_id_ * 0x9E3779B97F4A7C15ULL + tag + 1));
  }
  RngStream fork(std::string_view tag) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : tag) h = (h ^ ch) * 0x100000001b3ULL;
    return fork(h);
  }

  std::uint32_t next_u32() {
    if (buffered_ == 4) {
      refill();
    }
    return buffer_[buffered_++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  /// Uniform in [0, 1) with 24 random bits.
  float uniform_float() {
    return static_cast<float>(next_u32() >> 8) * (1.0f / 16777216.0f);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform_double() {
    return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
  }

  /// Uniform integer in [0, n) by rejection sampling (no modulo bias).
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) {
      throw std::invalid_argument("uniform_index: empty range");
    }
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t draw = next_u64();
    while (draw >= limit) {
      draw = next_u64();
    }
    return draw % n;
  }

  /// Fisher-Yates shuffle driven by this stream.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  static std::array<std::uint32_t, 4> philox_block(
      std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t kM0 = 0xD2511F53u;
    constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    constexpr std::uint32_t kW0 = 0x9E3779B9u;
    constexpr std::uint32_t kW1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += kW0;
      key[1] += kW1;
    }
    return ctr;
  }

 private:
  static std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  void refill() {
    const std::array<std::uint32_t, 4> ctr{
        static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
        static_cast<std::uint32_t>(stream_id_),
        static_cast<std::uint32_t>(stream_id_ >> 32)};
    buffer_ = philox_block(ctr, key_);
    ++block_;
    buffered_ = 0;
  }

  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_id_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int buffered_ = 4;
};

}  // namespace stforge
