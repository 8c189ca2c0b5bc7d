#include "mlmt/eval/metrics.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <numeric>

namespace mlmt::eval {

using core::BoundingBox;
using core::DataError;

bool match_eligible(const BoundingBox& pred, const BoundingBox& gt)
{
    const long inter = core::intersection_area(pred, gt);
    return 2 * inter >= pred.area() || 2 * inter >= gt.area();
}

MatchResult match_detections(const std::vector<BoundingBox>& preds, const std::vector<BoundingBox>& gts)
{
    const int np = static_cast<int>(preds.size());
    const int ng = static_cast<int>(gts.size());

    std::vector<int> order(static_cast<std::size_t>(np));
    std::iota(order.begin(), order.end(), 0);
    auto score_of = [&](int i) {
        return preds[i].score ? *preds[i].score : std::numeric_limits<double>::infinity();
    };
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return score_of(a) > score_of(b); });

    std::vector<std::vector<int>> candidates(static_cast<std::size_t>(np));
    for (int p = 0; p < np; ++p) {
        for (int g = 0; g < ng; ++g)
            if (match_eligible(preds[p], gts[g])) candidates[p].push_back(g);
        std::stable_sort(candidates[p].begin(), candidates[p].end(), [&](int a, int b) {
            return core::intersection_area(preds[p], gts[a]) > core::intersection_area(preds[p], gts[b]);
        });
    }

    std::vector<int> gt_owner(static_cast<std::size_t>(ng), -1);
    std::vector<char> visited;
    std::function<bool(int)> augment = [&](int p) {
        for (int g : candidates[p]) {
            if (visited[g]) continue;
            visited[g] = 1;
            if (gt_owner[g] < 0 || augment(gt_owner[g])) {
                gt_owner[g] = p;
                return true;
            }
        }
        return false;
    };
    for (int p : order) {
        visited.assign(static_cast<std::size_t>(ng), 0);
        augment(p);
    }

    MatchResult result;
    std::vector<int> pred_match(static_cast<std::size_t>(np), -1);
    for (int g = 0; g < ng; ++g)
        if (gt_owner[g] >= 0) pred_match[gt_owner[g]] = g;
    for (int p : order) {
        if (pred_match[p] >= 0) result.matches.emplace_back(p, pred_match[p]);
        else result.unmatched_predictions.push_back(p);
    }
    for (int g = 0; g < ng; ++g)
        if (gt_owner[g] < 0) result.unmatched_ground_truth.push_back(g);
    return result;
}

PrF1 prf1(const Counts& c)
{
    PrF1 out;
    out.degenerate = c.tp + c.fp + c.fn == 0;
    out.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
    out.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
    const double s = out.precision + out.recall;
    out.f1 = s > 0 ? 2.0 * out.precision * out.recall / s : 0.0;
    return out;
}

namespace {

void check_same_shape(const core::SegMask& a, const core::SegMask& b)
{
    if (a.height != b.height || a.width != b.width || a.labels.size() != b.labels.size())
        throw DataError("masks differ in shape");
}

}  // namespace

void IouTally::add(const core::SegMask& pred, const core::SegMask& gt)
{
    check_same_shape(pred, gt);
    if (pred.class_set != gt.class_set) throw DataError("masks use different class sets");
    if (inter_.empty()) {
        inter_.assign(gt.class_set.size(), 0);
        uni_.assign(gt.class_set.size(), 0);
    }
    if (gt.class_set.size() != inter_.size()) throw DataError("class count differs from earlier masks");
    const auto n = inter_.size();
    for (std::size_t i = 0; i < gt.labels.size(); ++i) {
        const auto p = pred.labels[i];
        const auto g = gt.labels[i];
        if (p >= n || g >= n) throw DataError("mask label outside class set");
        if (p == g) {
            ++inter_[p];
            ++uni_[p];
        } else {
            ++uni_[p];
            ++uni_[g];
        }
    }
}

IouScores IouTally::scores() const
{
    IouScores s;
    double sum = 0;
    int counted = 0;
    for (std::size_t c = 0; c < inter_.size(); ++c) {
        if (uni_[c] == 0) {
            s.per_class.push_back(std::nullopt);
            s.skipped_classes.push_back(static_cast<int>(c));
            continue;
        }
        const double v = static_cast<double>(inter_[c]) / static_cast<double>(uni_[c]);
        s.per_class.push_back(v);
        sum += v;
        ++counted;
    }
    s.mean = counted > 0 ? sum / counted : 0.0;
    return s;
}

IouScores iou_scores(const core::SegMask& pred, const core::SegMask& gt)
{
    IouTally tally(gt.class_set.size());
    tally.add(pred, gt);
    return tally.scores();
}

std::optional<double> agreement(const core::SegMask& a, const core::SegMask& b, int class_id)
{
    check_same_shape(a, b);
    long inter = 0;
    long uni = 0;
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
        const bool in_a = a.labels[i] == class_id;
        const bool in_b = b.labels[i] == class_id;
        inter += in_a && in_b;
        uni += in_a || in_b;
    }
    if (uni == 0) return std::nullopt;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace mlmt::eval
