#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "lookalike/error.hpp"

// Little-endian primitive readers/writers shared by the RSSG, RSSM and RSSI
// file formats.
namespace lookalike::binio {

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_arithmetic_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  static_assert(std::is_arithmetic_v<T>);
  unsigned char bytes[sizeof(T)];
  is.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!is) throw Error(ErrorCode::FormatError, "unexpected end of file");
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

void write_magic(std::ostream& os, const char (&magic)[5]);
// Throws FormatError when the next four bytes differ from `magic`.
void expect_magic(std::istream& is, const char (&magic)[5]);

void write_string(std::ostream& os, const std::string& s, std::size_t length_bytes);
std::string read_string(std::istream& is, std::size_t length_bytes, std::size_t max_len = 1u << 26);

}  // namespace lookalike::binio
