#pragma once

#include <array>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "mlmt/core/tensor_io.hpp"
#include "mlmt/core/types.hpp"
#include "mlmt/detect/anchors.hpp"
#include "mlmt/detect/fusion.hpp"
#include "mlmt/detect/moo.hpp"
#include "mlmt/detect/proposals.hpp"

namespace mlmt::detect {

struct DetectorConfig {
    std::vector<std::string> bands;
    /// Single-channel bands are repeated to this many channels at the input.
    int input_channels = 1;
    /// One conv block per entry; every block but the last halves the resolution.
    std::vector<int> branch_channels{16, 32, 32};
    FusionSpec fusion;
    AnchorConfig anchors{{{1, 1}, {1, 2}, {2, 1}}, {8, 16, 24}, 4};
    int rpn_channels = 64;

    double rpn_pos_iou = 0.7;
    double rpn_neg_iou = 0.3;
    int rpn_batch = 256;
    double rpn_positive_fraction = 0.5;
    double rpn_nms = 0.7;
    int pre_nms_top_n = 300;
    int post_nms_top_n_train = 100;
    int post_nms_top_n_test = 50;
    double min_proposal_size = 1.0;

    int roi_size = 7;
    int head_hidden = 128;
    int roi_batch = 64;
    double roi_positive_fraction = 0.25;
    double roi_fg_iou = 0.5;
    std::array<double, 4> head_delta_scale{0.1, 0.1, 0.2, 0.2};

    double final_nms = 0.3;
    double score_threshold = 0.5;
    double lambda = 10.0;
    double head_lambda = 1.0;

    /// Feature stride implied by branch_channels.
    int stride() const { return 1 << (static_cast<int>(branch_channels.size()) - 1); }
    void validate() const;
};

struct DetectorLosses {
    torch::Tensor rpn;   // summed over bands
    torch::Tensor head;  // summed over bands
    torch::Tensor total() const { return rpn + head; }
};

/// Everything one test-time pass produces for one image.
struct DetectionTrace {
    BandProposals proposals;  // per band, as handed to that band's head
    std::map<std::string, std::vector<core::BoundingBox>> detections;
};

using BandBoxes = std::map<std::string, std::vector<core::BoundingBox>>;

/// Per-band conv branches, fusion, then one RPN and one RoI head per band.
/// Parameter names start with "branches."/"trunk." (feature extraction),
/// "rpn." or "head." so stages can be checkpointed separately.
class DetectorImpl : public torch::nn::Module {
public:
    explicit DetectorImpl(DetectorConfig cfg);

    const DetectorConfig& config() const { return cfg_; }

    /// images: [N, B, H, W] with B = number of bands. Returns the fused map.
    torch::Tensor features(const torch::Tensor& images);

    /// Objectness probabilities [N, K] and offsets [N, K, 4] of band b's RPN,
    /// K anchors in generate_anchors order.
    std::pair<torch::Tensor, torch::Tensor> rpn_outputs(const torch::Tensor& fused, std::size_t band);

    /// Band b's head on RoIs of image n: probabilities [R], offsets [R, 4].
    std::pair<torch::Tensor, torch::Tensor> head_outputs(const torch::Tensor& fused, int64_t n, std::size_t band,
                                                        const std::vector<BoxF>& rois);

    /// Decoded, clipped and suppressed proposals of band b for image n.
    std::vector<Proposal> band_proposals(const torch::Tensor& probs, const torch::Tensor& deltas, int64_t n,
                                         std::size_t band, int height, int width, int top_n) const;

    /// Training objective on one mini-batch; gts[n][band] holds that band's boxes.
    DetectorLosses losses(const torch::Tensor& images, const std::vector<BandBoxes>& gts, std::mt19937_64& rng);

    /// Inference on one image [B, H, W].
    DetectionTrace run(const torch::Tensor& image, RunMode mode);

    std::vector<BoxF> anchors_for(int height, int width) const;

    /// Parameter-name prefixes owned by a stage.
    static std::vector<std::string> stage_prefixes(Stage s);

private:
    DetectorConfig cfg_;
    torch::nn::ModuleList branches_{nullptr};
    torch::nn::Sequential trunk_{nullptr};
    torch::nn::ModuleList rpn_{nullptr};
    torch::nn::ModuleList head_{nullptr};
};
TORCH_MODULE(Detector);

/// Stacks a sample's band rasters (in `bands` order) into [B, H, W].
torch::Tensor sample_tensor(const core::MultiLayerSample& sample, const std::vector<std::string>& bands);

/// Per-band scored detections for the model's bands. Extra bands in the
/// sample are ignored; a missing one throws core::DataError.
BandBoxes detect_forward(const core::MultiLayerSample& sample, Detector& model, RunMode mode);

/// Loads each stage's best snapshot into the model.
void assemble_best(Detector& model, const StageCheckpointSet& store);

}  // namespace mlmt::detect
