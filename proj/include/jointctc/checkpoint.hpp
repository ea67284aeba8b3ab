#pragma once

#include "jointctc/model.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>

namespace jointctc {

// Checkpoint layout, all integers little-endian:
//
//   magic      8 bytes  "JCTCCKPT"
//   version    u32      kCheckpointVersion
//   config     u64 length + UTF-8 JSON of ModelConfig
//   count      u64      number of parameter arrays
//   per array  u32 name length, name bytes,
//              u32 rank, rank x u64 dims,
//              prod(dims) x f64 row-major payload
//
// Arrays are written in name order, so identical models produce identical
// files.

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& json);

void write_checkpoint(std::ostream& out, const Model& model);
Model read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace jointctc
