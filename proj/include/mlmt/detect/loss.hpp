#pragma once

#include <vector>

#include <torch/torch.h>

namespace mlmt::detect {

/// One band's share of the two-term detection objective.
struct BandDetectionTerms {
    torch::Tensor probs;    // [N] object probability per anchor
    torch::Tensor deltas;   // [N, 4] predicted offsets
    torch::Tensor labels;   // [N] 1 positive, 0 negative, -1 ignored
    torch::Tensor targets;  // [N, 4] target offsets, read where label == 1
    double n_cls = 1;       // mini-batch size
    double n_reg = 1;       // anchor count
};

struct DetectionBatch {
    std::vector<BandDetectionTerms> bands;
    double lambda = 10.0;
};

inline constexpr double kDetectionLogEpsilon = 1e-7;

/// Sum over bands of (1/N_cls) sum_i BCE(p_i, p*_i) + lambda (1/N_reg)
/// sum_i p*_i smoothL1(t_i - t*_i). Differentiable w.r.t. probs and deltas
/// through a hand-written backward; the log is clamped at
/// kDetectionLogEpsilon, so a perfect prediction costs exactly 0.
torch::Tensor detection_loss(const DetectionBatch& batch);

/// Same objective for a single band.
torch::Tensor band_detection_loss(const BandDetectionTerms& terms, double lambda);

}  // namespace mlmt::detect
