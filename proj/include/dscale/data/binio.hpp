#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "dscale/core/errors.hpp"

// Little-endian binary primitives shared by the on-disk formats.
namespace dscale::io {

inline void write_u8(std::ostream& os, std::uint8_t v) {
  os.put(static_cast<char>(v));
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint8_t read_u8(std::istream& is) {
  const int c = is.get();
  if (c == EOF) throw DataError("unexpected end of file");
  return static_cast<std::uint8_t>(c);
}

inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(read_u8(is)) << (8 * i);
  return v;
}

inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(read_u8(is)) << (8 * i);
  return v;
}

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw DataError("unexpected end of file");
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  write_bytes(os, s.data(), s.size());
}

inline std::string read_string(std::istream& is, std::size_t max_len = 1 << 20) {
  const std::uint64_t n = read_u64(is);
  if (n > max_len) throw DataError("string length " + std::to_string(n) + " is implausible");
  std::string s(n, '\0');
  if (n) read_bytes(is, s.data(), n);
  return s;
}

template <class S>
constexpr std::uint8_t dtype_code() {
  static_assert(sizeof(S) == 4 || sizeof(S) == 8, "unsupported scalar");
  return sizeof(S) == 4 ? 1 : 2;
}

// Raw scalar payloads; assumes a little-endian host (checked in tests).
template <class S>
void write_scalars(std::ostream& os, const S* p, std::size_t n) {
  write_bytes(os, p, n * sizeof(S));
}

template <class S>
void read_scalars(std::istream& is, S* p, std::size_t n) {
  read_bytes(is, p, n * sizeof(S));
}

}  // namespace dscale::io
