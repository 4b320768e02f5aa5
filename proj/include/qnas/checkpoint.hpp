// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "qnas/trainkit.hpp"

namespace qnas {

// Single-file checkpoint: an 8-byte magic, a little-endian u64 manifest
// length, a JSON manifest (versioned; names, shapes, byte offsets, digests,
// all non-tensor state) and a float32 little-endian payload. Round-trips are
// bitwise lossless, including rng and optimizer state.
struct LoadedCheckpoint {
    TrainerState state;
    std::string config_text;
    std::string config_digest;
};

void checkpoint_save(const std::string& path, const TrainerState& st,
                     const std::string& config_text);

// Verifies the manifest version, the payload digest and the config digest
// before reconstructing; throws std::runtime_error on any mismatch.
LoadedCheckpoint checkpoint_load(const std::string& path);

// FNV-1a over the bytes of `text`, rendered as 16 hex digits. The digest
// stored in checkpoints and compared against the --config a caller passes.
std::string config_digest(const std::string& text);

} // namespace qnas
