#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "decode/tensor.hpp"

namespace decode {

// Checkpoint container: magic "DCKP", u32 version, u64 entry count, then a
// directory of (u32 name length, name, u8 dtype, u8 ndim, ndim x u64
// extents, payload). dtype 1 = f64 tensor, dtype 2 = raw bytes (metadata
// JSON). Entries keep insertion order, so save -> load -> save is
// byte-identical.
struct CheckpointData {
    std::vector<std::pair<std::string, Tensor>> tensors;
    std::string meta_json;
};

constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint_file(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint_file(const std::string& path);

}  // namespace decode
