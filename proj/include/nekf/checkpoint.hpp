#pragma once

// Binary checkpoint of a TrainState.
//
// Layout (all integers little-endian):
//   8 bytes   magic "NEKFCKPT"
//   u32       format version
//   u64       header length H
//   H bytes   UTF-8 JSON header: spec, epoch, optimizer step, configuration
//             echo, normalization record and a tensor manifest
//             [{name, rows, cols, offset}] with byte offsets into the payload
//   payload   float64 little-endian, each tensor row-major

#include "nekf/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace nekf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Serialized bytes of `state`; deterministic for a given state.
std::vector<char> encode_checkpoint(const TrainState& state);
/// Throws ParseError (with the byte offset) on truncated or corrupt input and
/// on a version mismatch. No partially decoded state escapes.
TrainState decode_checkpoint(const std::vector<char>& bytes);

/// Written to a temporary sibling and renamed into place.
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

std::string spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const std::string& text);

}  // namespace nekf
