#pragma once

#include "dcolor/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace dcolor {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Named tensors plus a free-form JSON metadata string. On-disk layout is
// documented in docs/formats.md.
struct Checkpoint {
    std::map<std::string, Tensor> tensors;
    std::string metadata;
};

void saveCheckpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint loadCheckpoint(const std::string& path);

std::string encodeCheckpoint(const Checkpoint& ckpt);
Checkpoint decodeCheckpoint(std::string bytes, const std::string& source = "checkpoint");

} // namespace dcolor
