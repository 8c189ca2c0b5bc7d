#pragma once

#include <cstdint>
#include <vector>

#include "mlmt/core/types.hpp"

namespace mlmt::core {

/// Crops `box` out of `image` and resamples it to target x target with
/// bilinear interpolation on a corner-aligned grid, so the four output
/// corners coincide with the four corner pixels of the box.
/// Throws DataError if the box is empty or leaves the image.
Raster crop_and_resize(const Raster& image, const BoundingBox& box, int target);

/// Nearest-neighbour resize of a class-index grid (row-major, src_h x src_w).
std::vector<std::uint8_t> resize_labels_nearest(const std::vector<std::uint8_t>& labels, int src_h, int src_w,
                                                int dst_h, int dst_w);

/// Crops a class mask to the box and resamples it (nearest) to target x target.
std::vector<std::uint8_t> crop_and_resize_labels(const SegMask& mask, const BoundingBox& box, int target);

}  // namespace mlmt::core
