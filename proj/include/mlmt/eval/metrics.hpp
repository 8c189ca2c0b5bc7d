#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mlmt/core/types.hpp"

namespace mlmt::eval {

/// A prediction counts against a ground-truth box when their intersection
/// covers at least half of either box.
bool match_eligible(const core::BoundingBox& pred, const core::BoundingBox& gt);

struct MatchResult {
    std::vector<std::pair<int, int>> matches;  // (prediction index, gt index)
    std::vector<int> unmatched_predictions;    // false positives
    std::vector<int> unmatched_ground_truth;   // false negatives

    long tp() const { return static_cast<long>(matches.size()); }
    long fp() const { return static_cast<long>(unmatched_predictions.size()); }
    long fn() const { return static_cast<long>(unmatched_ground_truth.size()); }
};

/// One-to-one matching under the half-of-either-area rule. Predictions are
/// visited in descending score order (boxes without a score rank first, in
/// input order); each first tries its eligible GT boxes by decreasing
/// intersection, and may re-route an earlier prediction along an augmenting
/// path, so the TP count is the maximum achievable.
MatchResult match_detections(const std::vector<core::BoundingBox>& preds, const std::vector<core::BoundingBox>& gts);

struct Counts {
    long tp = 0;
    long fp = 0;
    long fn = 0;

    Counts& operator+=(const Counts& o)
    {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
};

inline Counts counts_of(const MatchResult& m) { return Counts{m.tp(), m.fp(), m.fn()}; }

struct PrF1 {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    /// Set when there were neither predictions nor ground truth.
    bool degenerate = false;
};

PrF1 prf1(const Counts& c);
inline PrF1 prf1(const MatchResult& m) { return prf1(counts_of(m)); }

struct IouScores {
    std::vector<std::optional<double>> per_class;  // nullopt: class absent from both
    double mean = 0;
    std::vector<int> skipped_classes;
};

/// Pools per-class intersection and union pixel counts over many masks.
class IouTally {
public:
    explicit IouTally(std::size_t n_classes = 0) : inter_(n_classes, 0), uni_(n_classes, 0) {}

    void add(const core::SegMask& pred, const core::SegMask& gt);
    IouScores scores() const;
    std::size_t n_classes() const { return inter_.size(); }

private:
    std::vector<long> inter_;
    std::vector<long> uni_;
};

/// Per-class IoU and the mean over classes present in either mask.
/// Throws core::DataError on shape or class-set mismatch.
IouScores iou_scores(const core::SegMask& pred, const core::SegMask& gt);

/// Single-class IoU between two methods' masks; nullopt when neither
/// contains the class.
std::optional<double> agreement(const core::SegMask& a, const core::SegMask& b, int class_id);

}  // namespace mlmt::eval
