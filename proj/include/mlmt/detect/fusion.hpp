#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

namespace mlmt::detect {

enum class FusionStage { early, late };
enum class FusionOp { concatenate, add };

/// Where per-band features meet (after the first block, or after the
/// whole branch) and how (channel stacking or element-wise sum).
struct FusionSpec {
    FusionStage stage = FusionStage::late;
    FusionOp op = FusionOp::concatenate;

    /// Channels of the fused map given per-branch channels.
    int fused_channels(int per_band_channels, int n_bands) const
    {
        return op == FusionOp::concatenate ? per_band_channels * n_bands : per_band_channels;
    }
};

FusionStage parse_fusion_stage(const std::string& s);
FusionOp parse_fusion_op(const std::string& s);
std::string to_string(FusionStage s);
std::string to_string(FusionOp op);

/// Merges per-band maps shaped [N, C_b, H, W]. Concatenation stacks along
/// channels in band order; addition needs equal channel counts.
/// Throws std::invalid_argument on shape mismatch.
torch::Tensor fuse_features(const std::vector<torch::Tensor>& per_band, FusionOp op);

}  // namespace mlmt::detect
