#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "mlmt/core/types.hpp"

namespace mlmt::detect {

/// Real-valued box (top-left corner plus extent). Anchors and decoded
/// proposals need fractional geometry; detections are rounded to
/// core::BoundingBox only at the output.
struct BoxF {
    double x = 0;
    double y = 0;
    double w = 0;
    double h = 0;

    double area() const { return w * h; }
    double cx() const { return x + w / 2; }
    double cy() const { return y + h / 2; }
    bool operator==(const BoxF&) const = default;
};

BoxF to_boxf(const core::BoundingBox& b);
double iou(const BoxF& a, const BoxF& b);

/// Clips to [0, width] x [0, height].
BoxF clip(const BoxF& b, int width, int height);

/// Rounds to integer pixels inside the frame, keeping at least 1x1.
core::BoundingBox to_pixel_box(const BoxF& b, int width, int height, int class_id = 0);

struct AnchorConfig {
    /// (w, h) proportions; each anchor keeps area width^2.
    std::vector<std::pair<double, double>> aspect_ratios{{1, 1}, {1, 2}, {2, 1}};
    std::vector<double> base_widths{32, 64, 128, 256};
    int feature_stride = 16;

    std::size_t per_location() const { return aspect_ratios.size() * base_widths.size(); }
    void validate() const;
};

/// Anchors for every cell of a feat_h x feat_w grid, ordered by
/// (row, column, ratio, width). Cell (r, c) is centred on
/// ((c + 0.5) * stride, (r + 0.5) * stride) in image pixels.
std::vector<BoxF> generate_anchors(const AnchorConfig& cfg, int feat_h, int feat_w);

/// Box-offset parameterisation (dx, dy, log dw, log dh) relative to a reference box.
using Deltas = std::array<double, 4>;
Deltas encode(const BoxF& reference, const BoxF& target);
BoxF decode(const BoxF& reference, const Deltas& d);

enum class AnchorLabel : std::int8_t { ignore = -1, negative = 0, positive = 1 };

struct RpnTargets {
    std::vector<AnchorLabel> labels;
    std::vector<Deltas> deltas;  // meaningful only where the label is positive
    std::vector<int> matched_gt;  // -1 when no GT overlaps
};

/// Positive when IoU >= pos_iou with some GT box, or when the anchor is the
/// best match of some GT box; negative when its best IoU is below neg_iou;
/// ignored otherwise. Empty GT makes every anchor negative.
RpnTargets assign_rpn_targets(const std::vector<BoxF>& anchors, const std::vector<core::BoundingBox>& gt,
                              double pos_iou = 0.7, double neg_iou = 0.3);

/// Keeps at most `batch_size` labelled anchors, up to `positive_fraction` of
/// them positive; the others become ignored. Returns the number kept.
template <class Rng>
int subsample_labels(std::vector<AnchorLabel>& labels, int batch_size, double positive_fraction, Rng& rng);

/// Greedy non-maximum suppression. Boxes are visited by descending score
/// (stable on ties) and dropped when their IoU with an already kept box
/// exceeds `iou_threshold`. Returns kept indices, best first.
std::vector<int> nms(const std::vector<BoxF>& boxes, const std::vector<double>& scores, double iou_threshold);
std::vector<core::BoundingBox> nms(const std::vector<core::BoundingBox>& scored, double iou_threshold);

}  // namespace mlmt::detect

#include "mlmt/detect/anchors_impl.hpp"
