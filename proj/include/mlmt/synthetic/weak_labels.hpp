#pragma once

#include "mlmt/core/types.hpp"

namespace mlmt::synthetic {

struct WeakLabelConfig {
    double intensity_percentile = 99.0;
    int morph_open_radius = 2;
    int morph_close_radius = 2;
    int min_component_area = 25;

    void validate() const;
};

/// Conservative foreground from intensity alone: pixels strictly above the
/// percentile, opened then closed with disk elements, clipped back to the
/// thresholded set, then components smaller than `min_component_area`
/// (8-connected) dropped. Output classes are {"background", "object"}.
core::SegMask make_weak_seg_labels(const core::Raster& image, const WeakLabelConfig& cfg);

/// Erodes each non-background class region by a disk of `erosion_radius`;
/// eroded-away pixels become background. Image borders count as background.
core::SegMask weaken_gt_masks(const core::SegMask& gt, int erosion_radius, int background_class = 0);

}  // namespace mlmt::synthetic
