#pragma once

// Parameter checkpoint files.
//
//   bytes 0..7    magic "GEDICKPT"
//   bytes 8..15   header length H, little-endian uint64
//   next H bytes  JSON header {"format_version", "parameters": [{"name",
//                 "shape", "offset"}], "payload_bytes", "metadata"}
//   payload       little-endian IEEE-754 float64 values, row-major, at the
//                 given byte offsets from the start of the payload

#include <filesystem>
#include <string>

#include <json.hpp>

#include "gedi/params.hpp"

namespace gedi {

inline constexpr int kCheckpointFormatVersion = 1;

std::string serialize_checkpoint(const ParamSet& params, const nlohmann::json& metadata = {});

struct Checkpoint {
  ParamSet params;
  nlohmann::json metadata;
};

/// Throws ParseError on a malformed or truncated file.
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params,
                     const nlohmann::json& metadata = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gedi
