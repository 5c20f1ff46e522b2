#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "dscale/core/errors.hpp"
#include "dscale/core/tensor.hpp"
#include "dscale/data/binio.hpp"

namespace dscale::data {

// Field file layout:
//   bytes 0..3   magic "CDF1"
//   u32          version (1)
//   u8           dtype (1 = f32, 2 = f64)
//   u8           ndim
//   6 bytes      padding (zero)
//   ndim x u64   extents
//   payload      row-major scalars, little endian

inline constexpr char kFieldMagic[4] = {'C', 'D', 'F', '1'};
inline constexpr std::uint32_t kFieldVersion = 1;

template <class S>
void write_field(const std::filesystem::path& path, const Tensor<S>& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for write: " + path.string());
  out.write(kFieldMagic, 4);
  io::write_u32(out, kFieldVersion);
  io::write_u8(out, io::dtype_code<S>());
  io::write_u8(out, static_cast<std::uint8_t>(t.rank()));
  for (int i = 0; i < 6; ++i) io::write_u8(out, 0);
  for (std::size_t e : t.shape()) io::write_u64(out, e);
  io::write_scalars(out, t.data(), t.numel());
  if (!out) throw DataError("write failed: " + path.string());
}

template <class S>
Tensor<S> read_field(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open for read: " + path.string());
  char magic[4];
  io::read_bytes(in, magic, 4);
  if (std::string(magic, 4) != std::string(kFieldMagic, 4))
    throw DataError("bad field magic in " + path.string());
  if (io::read_u32(in) != kFieldVersion)
    throw DataError("unsupported field version in " + path.string());
  const auto dtype = io::read_u8(in);
  if (dtype != io::dtype_code<S>())
    throw DataError("field dtype mismatch in " + path.string());
  const auto ndim = io::read_u8(in);
  for (int i = 0; i < 6; ++i) io::read_u8(in);
  Shape shape(ndim);
  for (auto& e : shape) {
    e = static_cast<std::size_t>(io::read_u64(in));
    if (e == 0) throw DataError("zero extent in " + path.string());
  }
  Tensor<S> t(shape);
  io::read_scalars(in, t.data(), t.numel());
  return t;
}

}  // namespace dscale::data
