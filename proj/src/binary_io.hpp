#pragma once

// Little-endian stream helpers shared by the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

namespace ofscil::detail {

template <typename UInt>
void write_le(std::ostream& out, UInt value) {
  static_assert(std::is_unsigned_v<UInt>);
  unsigned char bytes[sizeof(UInt)];
  for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(UInt));
}

inline void write_f64(std::ostream& out, double v) { write_le(out, std::bit_cast<std::uint64_t>(v)); }
inline void write_f32(std::ostream& out, float v) { write_le(out, std::bit_cast<std::uint32_t>(v)); }

inline void write_magic(std::ostream& out, std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

// Returns false on short read.
template <typename UInt>
bool read_le(std::istream& in, UInt& value) {
  static_assert(std::is_unsigned_v<UInt>);
  unsigned char bytes[sizeof(UInt)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(UInt))) return false;
  value = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) value |= static_cast<UInt>(bytes[i]) << (8 * i);
  return true;
}

inline bool read_f64(std::istream& in, double& v) {
  std::uint64_t bits = 0;
  if (!read_le(in, bits)) return false;
  v = std::bit_cast<double>(bits);
  return true;
}

inline bool read_f32(std::istream& in, float& v) {
  std::uint32_t bits = 0;
  if (!read_le(in, bits)) return false;
  v = std::bit_cast<float>(bits);
  return true;
}

inline bool read_magic(std::istream& in, std::string_view expected) {
  std::string got(expected.size(), '\0');
  if (!in.read(got.data(), static_cast<std::streamsize>(got.size()))) return false;
  return got == expected;
}

// Signed value stored in `width` little-endian bytes (two's complement).
inline void write_signed(std::ostream& out, std::int64_t v, std::size_t width) {
  const auto u = static_cast<std::uint64_t>(v);
  for (std::size_t i = 0; i < width; ++i) out.put(static_cast<char>((u >> (8 * i)) & 0xFF));
}

inline bool read_signed(std::istream& in, std::int64_t& v, std::size_t width) {
  std::uint64_t u = 0;
  for (std::size_t i = 0; i < width; ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) return false;
    u |= static_cast<std::uint64_t>(c & 0xFF) << (8 * i);
  }
  if (width < 8 && (u >> (8 * width - 1)) & 1U) u |= ~std::uint64_t{0} << (8 * width);
  v = static_cast<std::int64_t>(u);
  return true;
}

}  // namespace ofscil::detail
