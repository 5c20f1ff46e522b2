#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "dscale/data/binio.hpp"
#include "dscale/models/model.hpp"

// Checkpoint format: "DSCK" magic, u32 version, u8 scalar dtype, config JSON,
// then every parameter (name + raw little-endian values) in registration
// order. Loading rebuilds the model from the embedded config and restores
// values bitwise.
namespace dscale {

inline constexpr char kCkptMagic[4] = {'D', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCkptVersion = 1;

template <class S>
void save_checkpoint(const Model<S>& m, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path.string());
  io::write_bytes(os, kCkptMagic, 4);
  io::write_u32(os, kCkptVersion);
  io::write_u8(os, io::dtype_code<S>());
  io::write_string(os, m.config.to_json().dump());
  const auto params = m.params.all();
  io::write_u64(os, params.size());
  for (const Parameter<S>* p : params) {
    io::write_string(os, p->name);
    io::write_u64(os, p->numel());
    io::write_bytes(os, p->value.data(), p->numel() * sizeof(S));
  }
  if (!os) throw DataError("failed writing checkpoint: " + path.string());
}

template <class S>
Model<S> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  char magic[4];
  io::read_bytes(is, magic, 4);
  if (std::string(magic, 4) != std::string(kCkptMagic, 4)) {
    throw DataError("not a checkpoint file: " + path.string());
  }
  const std::uint32_t version = io::read_u32(is);
  if (version != kCkptVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint8_t dtype = io::read_u8(is);
  if (dtype != io::dtype_code<S>()) {
    throw DataError("checkpoint scalar type " + std::to_string(dtype) +
                    " does not match the requested build");
  }
  ModelConfig cfg = ModelConfig::from_json(nlohmann::json::parse(io::read_string(is)));
  Model<S> m = build_model<S>(cfg);
  const std::uint64_t n = io::read_u64(is);
  const auto params = m.params.all();
  if (n != params.size()) {
    throw DataError("checkpoint holds " + std::to_string(n) + " parameters, model wants " +
                    std::to_string(params.size()));
  }
  for (Parameter<S>* p : params) {
    const std::string name = io::read_string(is);
    if (name != p->name) {
      throw DataError("checkpoint parameter order mismatch: got '" + name + "', want '" +
                      p->name + "'");
    }
    const std::uint64_t numel = io::read_u64(is);
    if (numel != p->numel()) {
      throw DataError("checkpoint parameter '" + name + "' has " + std::to_string(numel) +
                      " values, want " + std::to_string(p->numel()));
    }
    io::read_bytes(is, p->value.data(), numel * sizeof(S));
  }
  return m;
}

}  // namespace dscale
