#pragma once

#include <vector>

#include "mlmt/core/types.hpp"

namespace mlmt::core {

/// Which mirrored copies to emit in addition to the original.
struct AugmentationSpec {
    bool north_south = false;  // flip rows
    bool east_west = false;    // flip columns
    bool both = false;         // flip rows and columns
};

Raster mirror_east_west(const Raster& r);
Raster mirror_north_south(const Raster& r);
SegMask mirror_east_west(const SegMask& m);
SegMask mirror_north_south(const SegMask& m);
BoundingBox mirror_east_west(const BoundingBox& b, int width);
BoundingBox mirror_north_south(const BoundingBox& b, int height);

/// Applies the same mirror to every band's raster, boxes and mask.
MultiLayerSample mirror_sample(const MultiLayerSample& s, bool north_south, bool east_west);

/// Original first, then NS, EW and NS+EW copies as requested. Derived
/// sample ids get a `_ns`, `_ew` or `_nsew` suffix.
std::vector<MultiLayerSample> augment(const MultiLayerSample& sample, const AugmentationSpec& spec);

}  // namespace mlmt::core
