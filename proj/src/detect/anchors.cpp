#include "mlmt/detect/anchors.hpp"

#include <cmath>
#include <numeric>

namespace mlmt::detect {

using core::DataError;

BoxF to_boxf(const core::BoundingBox& b) { return {double(b.x), double(b.y), double(b.w), double(b.h)}; }

double iou(const BoxF& a, const BoxF& b)
{
    const double iw = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
    const double ih = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
    if (iw <= 0 || ih <= 0) return 0.0;
    const double inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

BoxF clip(const BoxF& b, int width, int height)
{
    const double x0 = std::clamp(b.x, 0.0, double(width));
    const double y0 = std::clamp(b.y, 0.0, double(height));
    const double x1 = std::clamp(b.x + b.w, 0.0, double(width));
    const double y1 = std::clamp(b.y + b.h, 0.0, double(height));
    return {x0, y0, x1 - x0, y1 - y0};
}

core::BoundingBox to_pixel_box(const BoxF& b, int width, int height, int class_id)
{
    int x0 = static_cast<int>(std::lround(b.x));
    int y0 = static_cast<int>(std::lround(b.y));
    int x1 = static_cast<int>(std::lround(b.x + b.w));
    int y1 = static_cast<int>(std::lround(b.y + b.h));
    x0 = std::clamp(x0, 0, width - 1);
    y0 = std::clamp(y0, 0, height - 1);
    x1 = std::clamp(x1, x0 + 1, width);
    y1 = std::clamp(y1, y0 + 1, height);
    return {x0, y0, x1 - x0, y1 - y0, class_id, {}};
}

void AnchorConfig::validate() const
{
    if (aspect_ratios.empty() || base_widths.empty()) throw DataError("anchor ratios and widths must be non-empty");
    for (const auto& [w, h] : aspect_ratios)
        if (!(w > 0 && h > 0)) throw DataError("anchor aspect ratio terms must be positive");
    for (double w : base_widths)
        if (!(w > 0)) throw DataError("anchor widths must be positive");
    if (feature_stride < 1) throw DataError("feature stride must be positive");
}

std::vector<BoxF> generate_anchors(const AnchorConfig& cfg, int feat_h, int feat_w)
{
    cfg.validate();
    if (feat_h < 1 || feat_w < 1) throw DataError("feature grid must have positive dimensions");
    // Shapes per location: w/h follows the ratio, area stays width^2.
    std::vector<std::pair<double, double>> shapes;
    for (const auto& [rw, rh] : cfg.aspect_ratios) {
        const double k = std::sqrt(rw / rh);
        for (double base : cfg.base_widths) shapes.emplace_back(base * k, base / k);
    }
    std::vector<BoxF> out;
    out.reserve(static_cast<std::size_t>(feat_h) * feat_w * shapes.size());
    const double s = cfg.feature_stride;
    for (int r = 0; r < feat_h; ++r)
        for (int c = 0; c < feat_w; ++c)
            for (const auto& [w, h] : shapes) out.push_back({(c + 0.5) * s - w / 2, (r + 0.5) * s - h / 2, w, h});
    return out;
}

Deltas encode(const BoxF& ref, const BoxF& t)
{
    return {(t.cx() - ref.cx()) / ref.w, (t.cy() - ref.cy()) / ref.h, std::log(t.w / ref.w), std::log(t.h / ref.h)};
}

BoxF decode(const BoxF& ref, const Deltas& d)
{
    // Cap the log-scale terms so an untrained head cannot overflow exp().
    constexpr double kMaxLog = 4.135166556742356;  // log(1000 / 16)
    const double cx = ref.cx() + d[0] * ref.w;
    const double cy = ref.cy() + d[1] * ref.h;
    const double w = ref.w * std::exp(std::min(d[2], kMaxLog));
    const double h = ref.h * std::exp(std::min(d[3], kMaxLog));
    return {cx - w / 2, cy - h / 2, w, h};
}

RpnTargets assign_rpn_targets(const std::vector<BoxF>& anchors, const std::vector<core::BoundingBox>& gt,
                              double pos_iou, double neg_iou)
{
    if (!(0 <= neg_iou && neg_iou < pos_iou && pos_iou <= 1)) throw DataError("need 0 <= neg_iou < pos_iou <= 1");
    const std::size_t n = anchors.size();
    RpnTargets t;
    t.labels.assign(n, AnchorLabel::negative);
    t.deltas.assign(n, Deltas{0, 0, 0, 0});
    t.matched_gt.assign(n, -1);
    if (gt.empty()) return t;

    std::vector<BoxF> g;
    for (const auto& b : gt) g.push_back(to_boxf(b));
    std::vector<double> best_for_gt(g.size(), 0.0);
    std::vector<double> best_for_anchor(n, 0.0);
    std::vector<double> overlaps(n * g.size());
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t j = 0; j < g.size(); ++j) {
            const double v = iou(anchors[a], g[j]);
            overlaps[a * g.size() + j] = v;
            if (v > best_for_anchor[a]) {
                best_for_anchor[a] = v;
                t.matched_gt[a] = static_cast<int>(j);
            }
            best_for_gt[j] = std::max(best_for_gt[j], v);
        }
    }
    for (std::size_t a = 0; a < n; ++a) {
        if (best_for_anchor[a] >= pos_iou) t.labels[a] = AnchorLabel::positive;
        else if (best_for_anchor[a] >= neg_iou) t.labels[a] = AnchorLabel::ignore;
    }
    // Every GT box keeps its best anchor(s) positive, even below pos_iou.
    // Ties are compared with a tolerance: anchors differing only by
    // rounding in the IoU arithmetic count as equally good.
    constexpr double kTie = 1e-12;
    for (std::size_t j = 0; j < g.size(); ++j) {
        if (best_for_gt[j] <= 0) continue;
        for (std::size_t a = 0; a < n; ++a) {
            if (best_for_gt[j] - overlaps[a * g.size() + j] <= kTie) {
                t.labels[a] = AnchorLabel::positive;
                t.matched_gt[a] = static_cast<int>(j);
            }
        }
    }
    for (std::size_t a = 0; a < n; ++a)
        if (t.labels[a] == AnchorLabel::positive) t.deltas[a] = encode(anchors[a], g[t.matched_gt[a]]);
    return t;
}

std::vector<int> nms(const std::vector<BoxF>& boxes, const std::vector<double>& scores, double iou_threshold)
{
    if (boxes.size() != scores.size()) throw DataError("nms needs one score per box");
    std::vector<int> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
    std::vector<int> kept;
    for (int i : order) {
        bool keep = true;
        for (int k : kept) {
            if (iou(boxes[i], boxes[k]) > iou_threshold) {
                keep = false;
                break;
            }
        }
        if (keep) kept.push_back(i);
    }
    return kept;
}

std::vector<core::BoundingBox> nms(const std::vector<core::BoundingBox>& scored, double iou_threshold)
{
    std::vector<BoxF> boxes;
    std::vector<double> scores;
    for (const auto& b : scored) {
        boxes.push_back(to_boxf(b));
        scores.push_back(b.score.value_or(0.0));
    }
    std::vector<core::BoundingBox> out;
    for (int i : nms(boxes, scores, iou_threshold)) out.push_back(scored[i]);
    return out;
}

}  // namespace mlmt::detect
