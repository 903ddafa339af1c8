#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "camp/tensorcore/tensor.hpp"

namespace camp::tensor {

// Named-tensor container.
//
// Layout:
//   byte 0            format version (kCheckpointVersion)
//   bytes 1..8        manifest length N, uint64 little-endian
//   next N bytes      manifest text, one line per tensor:
//                       <name> <rank> <dim0> ... <dimR-1> <offset>
//                     offset counted in doubles from the payload start
//   remainder         payload, IEEE-754 binary64 little-endian
inline constexpr std::uint8_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const ParameterTree& params);
// Decodes into a fresh tree (names, shapes and values from the container).
ParameterTree decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const ParameterTree& params, const std::filesystem::path& path);
ParameterTree load_checkpoint(const std::filesystem::path& path);
// Loads values into an existing tree; names and shapes must match exactly.
void load_checkpoint_into(ParameterTree& params, const std::filesystem::path& path);

}  // namespace camp::tensor
