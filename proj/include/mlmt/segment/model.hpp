#pragma once

#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "mlmt/core/types.hpp"
#include "mlmt/detect/fusion.hpp"

namespace mlmt::segment {

struct SegModelConfig {
    std::vector<std::string> bands;
    int input_channels = 1;
    /// Number of 2x poolings in each contracting path.
    int depth = 4;
    int base_channels = 16;
    detect::FusionSpec fusion;
    std::vector<std::string> class_set;
    std::vector<double> class_weights;  // empty: uniform
    /// Side of the square patches fed to the network.
    int patch_size = 224;

    std::vector<double> weights() const;
    void validate() const;
};

/// U-Net style network with one contracting and one expanding path per
/// band. Late fusion merges the bottlenecks; early fusion merges after the
/// first block and shares the deeper contracting blocks. Every band's
/// expanding path reads the fused bottleneck plus that band's own
/// first-level skip (and, for late fusion, all of its own skips).
class SegNetImpl : public torch::nn::Module {
public:
    explicit SegNetImpl(SegModelConfig cfg);

    const SegModelConfig& config() const { return cfg_; }

    /// images: [N, B, P, P]. Returns per-band logits [N, C, P, P].
    std::vector<torch::Tensor> forward(const torch::Tensor& images);

    /// Fused bottleneck for inspection, [N, C_fused, P / 2^depth, P / 2^depth].
    torch::Tensor bottleneck(const torch::Tensor& images);

    int bottleneck_channels() const;

private:
    struct Encoded {
        std::vector<std::vector<torch::Tensor>> skips;  // [band][level]
        torch::Tensor fused;
    };
    Encoded encode(const torch::Tensor& images);

    SegModelConfig cfg_;
    torch::nn::ModuleList encoders_{nullptr};  // per band: list of double-conv blocks
    torch::nn::ModuleList shared_{nullptr};    // early fusion: deeper blocks
    torch::nn::ModuleList decoders_{nullptr};  // per band
};
TORCH_MODULE(SegNet);

/// Per-band class probabilities (softmax of the logits), each [C, P, P].
std::map<std::string, torch::Tensor> seg_forward(const std::map<std::string, core::Raster>& patches, SegNet& model);

/// Full-frame masks from per-band boxes. Every box is cropped from all
/// bands, resized to the patch size, segmented, and the owning band's
/// argmax labels are resized back (nearest) and pasted into that band's
/// mask. Boxes are pasted in ascending score order, so where boxes overlap
/// the higher score wins; boxes without a score outrank scored ones.
std::map<std::string, core::SegMask> predict_masks(const core::MultiLayerSample& sample,
                                                   const std::map<std::string, std::vector<core::BoundingBox>>& boxes,
                                                   SegNet& model, int background_class = 0);

/// Stacks per-band crops of one box into [B, P, P].
torch::Tensor crop_stack(const core::MultiLayerSample& sample, const std::vector<std::string>& bands,
                         const core::BoundingBox& box, int patch);

}  // namespace mlmt::segment
