#pragma once

// Checkpoint layout (all integers little-endian u32):
//   "SALAB1"
//   repeated until EOF:
//     name length, name bytes, rank, dims[rank], f32 payload[prod(dims)]

#include <string>
#include <utility>
#include <vector>

#include "salab/tensor.hpp"

namespace salab::nn {

inline constexpr char kCheckpointMagic[] = "SALAB1";

void save_checkpoint(const std::string& path, const ParameterSet<float>& params);

std::vector<std::pair<std::string, Tensor<float>>> read_checkpoint(const std::string& path);

/// Loads values into an existing set. Names and shapes must match exactly.
void load_checkpoint(const std::string& path, ParameterSet<float>& params);

}  // namespace salab::nn
