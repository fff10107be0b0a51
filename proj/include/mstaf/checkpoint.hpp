#pragma once
// Versioned little-endian checkpoint.
//
//   "MSTAFCKP"            8-byte magic
//   u32 version           currently 1
//   u32 n, n bytes        model config as key = value text
//   u32 count             number of tensors
//   per tensor:
//     u32 n, n bytes      name
//     u8  dtype           1 = f32, 2 = f64
//     u32 ndim, u64[ndim] shape
//     u64 nbytes          payload size, must equal numel * sizeof(dtype)
//     payload             values, little-endian IEEE 754
//   "END."                4-byte trailer

#include <filesystem>
#include <utility>

#include "mstaf/model.hpp"

namespace mstaf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const ParamStore<T>& params, const ModelConfig& cfg, const std::filesystem::path& path);

// Verifies every tensor against the names and shapes the stored config
// implies. Throws LoadError naming the offending tensor.
template <typename T>
std::pair<ParamStore<T>, ModelConfig> load_checkpoint(const std::filesystem::path& path);

// Reads only the stored config.
ModelConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace mstaf
