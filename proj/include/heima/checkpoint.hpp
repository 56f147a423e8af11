#pragma once

#include <cstdint>
#include <string>

#include "heima/net.hpp"

namespace heima {

/// Checkpoint byte layout (all integers little-endian):
///   char[8]  "HEIMACKP"
///   u32      format version (1)
///   u32 n, n bytes   JSON header: {"model": {...}, "kind", "phase", "step", "param_digest",
///                    "vocab_digest", "run_config_digest", "adapter": null}
///   u32      tensor count
///   per tensor, in declaration order:
///     u32 n, n bytes name; u32 rank; u64 dims[rank]; f32 values[prod(dims)]
struct CheckpointInfo {
    ModelConfig model;
    std::string kind;  // "encoder" or "decoder"
    std::string phase;
    std::int64_t step = 0;
    std::string param_digest;
    std::string vocab_digest;
    std::string run_config_digest;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes atomically (temporary file + rename). Fills param_digest from the parameters.
void save_checkpoint(const std::string& path, const Params<float>& params, CheckpointInfo info);

struct LoadedCheckpoint {
    CheckpointInfo info;
    Params<float> params;
};

/// Verifies layout, shapes and the parameter digest.
LoadedCheckpoint load_checkpoint(const std::string& path);
CheckpointInfo read_checkpoint_info(const std::string& path);

}  // namespace heima
