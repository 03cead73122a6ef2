#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>

#include "constbert/errors.hpp"

namespace constbert::io {

// Little-endian encode/decode for fixed-width integers and IEEE floats.

template <typename T>
void store_le(std::span<std::uint8_t> out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
            std::conditional_t<sizeof(T) == 2, std::uint16_t,
            std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out[i] = static_cast<std::uint8_t>(bits >> (8 * i));
}

template <typename T>
T load_le(std::span<const std::uint8_t> in) {
  static_assert(std::is_trivially_copyable_v<T>);
  using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
            std::conditional_t<sizeof(T) == 2, std::uint16_t,
            std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(static_cast<U>(in[i]) << (8 * i));
  return std::bit_cast<T>(bits);
}

template <typename T>
void write_le(std::ostream& os, T value) {
  std::uint8_t buf[sizeof(T)];
  store_le<T>(buf, value);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const std::string& what) {
  std::uint8_t buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw TruncatedError("unexpected end of file while reading " + what);
  }
  return load_le<T>(buf);
}

inline void write_floats_le(std::ostream& os, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float v : values) write_le(os, v);
  }
}

inline void read_floats_le(std::istream& is, std::span<float> out, const std::string& what) {
  if constexpr (std::endian::native == std::endian::little) {
    if (!is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size_bytes()))) {
      throw TruncatedError("unexpected end of file while reading " + what);
    }
  } else {
    for (float& v : out) v = read_le<float>(is, what);
  }
}

inline void expect_magic(std::istream& is, const char (&magic)[5], const std::string& path) {
  char got[4] = {};
  if (!is.read(got, 4)) throw TruncatedError(path + ": file too short for magic");
  if (std::memcmp(got, magic, 4) != 0) {
    throw FormatError(path + ": bad magic '" + std::string(got, 4) + "', expected '" + magic + "'");
  }
}

}  // namespace constbert::io
