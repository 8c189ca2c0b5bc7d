#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace mlmt::core {

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

/// Little-endian binary: magic, count, then per tensor its name, dtype
/// code, shape and raw contiguous bytes. Supports float32/float64/int64.
void save_named_tensors(const NamedTensors& tensors, const std::filesystem::path& path);
NamedTensors load_named_tensors(const std::filesystem::path& path);

/// Detached copies of every parameter and buffer, keyed by dotted name.
NamedTensors module_state(const torch::nn::Module& module);

/// Copies matching entries into the module's parameters/buffers. Only names
/// starting with one of `prefixes` are touched (all when empty). Throws
/// std::runtime_error on unknown names or shape mismatch.
void load_module_state(torch::nn::Module& module, const NamedTensors& state,
                       const std::vector<std::string>& prefixes = {});

}  // namespace mlmt::core
