#pragma once

// Checkpoint container (all integers little-endian):
//
//   magic          8 bytes  "BSLKCKPT"
//   version        u32      kCheckpointVersion
//   scalar_bytes   u32      4 (float) or 8 (double)
//   config_len     u64
//   config         config_len bytes of UTF-8 JSON (ModelConfig)
//   tensor_count   u64
//   tensor_count times:
//     name_len     u32, name bytes
//     decay        u8 (1 = weight decay applies)
//     rank         u32, then rank x u64 dims
//     data         numel x scalar_bytes, IEEE-754, row-major
//
// Loading accepts either scalar width and converts.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>

#include "basilisk/model/model.hpp"

namespace basilisk::model {

inline constexpr char kCheckpointMagic[8] = {'B', 'S', 'L', 'K', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointError("checkpoint: unexpected end of file");
  return v;
}

inline std::string get_string(std::istream& is, std::size_t n) {
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw CheckpointError("checkpoint: unexpected end of file");
  return s;
}
}  // namespace detail

template <class S>
void save_checkpoint(const Model<S>& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  detail::put<std::uint32_t>(os, sizeof(S));
  const std::string cfg = to_json(model.config()).dump();
  detail::put<std::uint64_t>(os, cfg.size());
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  detail::put<std::uint64_t>(os, model.parameters().size());
  for (const auto& p : model.parameters()) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put<std::uint8_t>(os, p.decay ? 1 : 0);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t dim : p.value.shape()) detail::put<std::uint64_t>(os, dim);
    os.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(S)));
  }
  if (!os) throw CheckpointError("checkpoint: write failed for " + path);
}

/// Reads just the configuration record.
inline ModelConfig read_checkpoint_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw CheckpointError("checkpoint: bad magic in " + path);
  const auto version = detail::get<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  detail::get<std::uint32_t>(is);
  const auto len = detail::get<std::uint64_t>(is);
  return model_config_from_json(nlohmann::json::parse(detail::get_string(is, len)));
}

template <class S>
std::unique_ptr<Model<S>> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw CheckpointError("checkpoint: bad magic in " + path);
  const auto version = detail::get<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  const auto scalar_bytes = detail::get<std::uint32_t>(is);
  if (scalar_bytes != 4 && scalar_bytes != 8) throw CheckpointError("checkpoint: invalid scalar width");
  const auto len = detail::get<std::uint64_t>(is);
  ModelConfig cfg = model_config_from_json(nlohmann::json::parse(detail::get_string(is, len)));
  auto model = std::make_unique<Model<S>>(cfg, 0);
  const auto count = detail::get<std::uint64_t>(is);
  if (count != model->parameters().size())
    throw CheckpointError("checkpoint: tensor count " + std::to_string(count) + " does not match model (" +
                          std::to_string(model->parameters().size()) + ")");
  for (std::uint64_t t = 0; t < count; ++t) {
    const auto name = detail::get_string(is, detail::get<std::uint32_t>(is));
    detail::get<std::uint8_t>(is);
    const auto rank = detail::get<std::uint32_t>(is);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(detail::get<std::uint64_t>(is));
    Parameter<S>* p = model->parameters().find(name);
    if (!p) throw CheckpointError("checkpoint: unknown tensor " + name);
    if (p->value.shape() != shape)
      throw CheckpointError("checkpoint: shape mismatch for " + name + ": " + shape_string(shape) + " vs " +
                            shape_string(p->value.shape()));
    const std::size_t n = shape_numel(shape);
    if (scalar_bytes == sizeof(S)) {
      is.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(n * sizeof(S)));
    } else if (scalar_bytes == 4) {
      for (std::size_t i = 0; i < n; ++i) p->value[i] = static_cast<S>(detail::get<float>(is));
    } else {
      for (std::size_t i = 0; i < n; ++i) p->value[i] = static_cast<S>(detail::get<double>(is));
    }
    if (!is) throw CheckpointError("checkpoint: truncated data for " + name);
  }
  return model;
}

}  // namespace basilisk::model
