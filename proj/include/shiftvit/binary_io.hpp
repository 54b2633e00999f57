#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "shiftvit/error.hpp"

namespace shiftvit::io {

template <typename T>
T byteswap_if(T value, std::endian wanted) {
  if (std::endian::native == wanted) return value;
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  std::reverse(bytes.begin(), bytes.end());
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

template <typename T>
void write_le(std::ostream& os, T value) {
  value = byteswap_if(value, std::endian::little);
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

inline void read_exact(std::istream& is, void* dst, std::size_t bytes, const char* what) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(is.gcount()) != bytes) {
    throw TruncatedError(std::string("truncated payload while reading ") + what);
  }
}

template <typename T>
T read_le(std::istream& is, const char* what) {
  T value;
  read_exact(is, &value, sizeof(T), what);
  return byteswap_if(value, std::endian::little);
}

template <typename T>
T read_be(std::istream& is, const char* what) {
  T value;
  read_exact(is, &value, sizeof(T), what);
  return byteswap_if(value, std::endian::big);
}

}  // namespace shiftvit::io
