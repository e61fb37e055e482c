#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "drpose/model.hpp"
#include "drpose/training.hpp"

namespace drpose {

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    ModelConfig config;
    Normalization norm;
    ModelParams params;
    std::uint32_t epochs_done = 0;           // completed epochs of the stage below
    Stage stage = Stage::Pretrain;
    std::optional<OptimizerState> optimizer;  // present only for resumable checkpoints
};

// Little-endian layout:
//   "DRPM" | u32 version | config (8 x u64, u8 learnable_adjacency) | 4 x f64 normalization |
//   u8 stage | u32 epochs_done | u32 tensor count | tensors | u8 has_optimizer |
//   [u64 step | u32 count | m tensors | v tensors]
// with each tensor as u32 name length, name bytes, u32 rank, rank x u64 dims, f64 data.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

// Validates every tensor against the stored config and, if given, against
// `expected` as well; errors name the offending tensor.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

RefineModel model_from_checkpoint(const Checkpoint& ckpt, const SkeletonGraph& skeleton);

}  // namespace drpose
