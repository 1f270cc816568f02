#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace stforge::io {

// Little-endian primitives. Floats travel as their IEEE-754 bit patterns.

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 24)};
  out.write(bytes, 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint32_t decode_u32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline bool get_u32(std::istream& in, std::uint32_t& v) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
  v = decode_u32(b);
  return true;
}

inline bool get_u64(std::istream& in, std::uint64_t& v) {
  std::uint32_t lo = 0, hi = 0;
  if (!get_u32(in, lo) || !get_u32(in, hi)) return false;
  v = static_cast<std::uint64_t>(lo) | (static_cast<std::uint64_t>(hi) << 32);
  return true;
}

inline void put_f32_block(std::ostream& out, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
  } else {
    for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
}

inline bool get_f32_block(std::istream& in, std::span<float> values) {
  std::vector<unsigned char> raw(values.size() * 4);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    return false;
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = std::bit_cast<float>(decode_u32(raw.data() + 4 * i));
  }
  return true;
}

/// FNV-1a 64-bit, rendered as 16 lowercase hex digits.
inline std::string fnv1a_hex(std::span<const unsigned char> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xF];
    h >>= 4;
  }
  return out;
}

inline std::string fnv1a_hex(const std::string& s) {
  return fnv1a_hex(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

}  // namespace stforge::io
