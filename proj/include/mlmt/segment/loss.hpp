#pragma once

#include <vector>

#include <torch/torch.h>

namespace mlmt::segment {

inline constexpr double kSegLogEpsilon = 1e-7;

/// Per-band class scores and labels for one batch of patches.
struct SegBatch {
    std::vector<torch::Tensor> logits;  // per band [N, C, H, W], before softmax
    std::vector<torch::Tensor> labels;  // per band [N, H, W], int64 class indices
};

/// -sum_b sum_c w_c sum_i y_icb log(yhat_icb) with yhat = softmax(logits)
/// over classes and log clamped at kSegLogEpsilon. No averaging. The
/// backward pass is analytic: w_y (yhat - onehot(y)) per pixel.
torch::Tensor segmentation_loss(const SegBatch& batch, const std::vector<double>& class_weights);

/// The same sum evaluated directly on probabilities [N, C, H, W] (one band).
torch::Tensor segmentation_loss_from_probs(const torch::Tensor& probs, const torch::Tensor& labels,
                                           const std::vector<double>& class_weights);

/// (2, 1, 2) for (active region, quiet sun, off disk).
std::vector<double> solar_class_weights();
std::vector<double> uniform_class_weights(std::size_t n_classes);

}  // namespace mlmt::segment
