#pragma once

#include <cstdint>
#include <filesystem>

#include "attnlreg/model/config.hpp"
#include "attnlreg/model/transformer.hpp"

namespace alr::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout, all integers u32 little-endian:
//   "ATLR" | version | array count | per array: name length, name bytes,
//   rank, dims..., raw f32 little-endian values.
void save_checkpoint(const ModelParams<float>& params, const std::filesystem::path& path);
ModelParams<float> load_checkpoint(const std::filesystem::path& path);

// Sidecar with the same base name and a .json extension.
std::filesystem::path config_sidecar_path(const std::filesystem::path& checkpoint);
void save_config(const ModelConfig& config, const std::filesystem::path& checkpoint, const nlohmann::json& extra = {});
ModelConfig load_config(const std::filesystem::path& checkpoint);

// Throws InvalidArgument naming the first parameter whose presence or
// dims disagree with `config`.
void check_compatible(const ModelConfig& config, const ModelParams<float>& params);

}  // namespace alr::model
