#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mlmt/core/types.hpp"

namespace mlmt::synthetic {

/// Dense 3D scalar volume, index order (z, y, x).
struct Volume {
    int depth = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Volume() = default;
    Volume(int d, int h, int w, float fill = 0.0f)
        : depth(d), height(h), width(w), data(static_cast<std::size_t>(d) * h * w, fill)
    {
    }

    float& at(int z, int y, int x) { return data[(static_cast<std::size_t>(z) * height + y) * width + x]; }
    float at(int z, int y, int x) const { return data[(static_cast<std::size_t>(z) * height + y) * width + x]; }

    core::Raster slice(int z) const;
    bool same_shape(int d, int h, int w) const { return depth == d && height == h && width == w; }
};

/// 3D class-index volume.
struct ClassVolume {
    int depth = 0;
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> labels;

    ClassVolume() = default;
    ClassVolume(int d, int h, int w, std::uint8_t fill = 0)
        : depth(d), height(h), width(w), labels(static_cast<std::size_t>(d) * h * w, fill)
    {
    }

    std::uint8_t& at(int z, int y, int x) { return labels[(static_cast<std::size_t>(z) * height + y) * width + x]; }
    std::uint8_t at(int z, int y, int x) const
    {
        return labels[(static_cast<std::size_t>(z) * height + y) * width + x];
    }

    core::SegMask slice(int z, std::vector<std::string> class_set) const;
};

/// Band k of the built sample takes slice z0 + k * gap of modality band_order[k].
struct SliceGapConfig {
    int gap = 1;
    int z0 = 0;
    std::vector<std::string> band_order;

    int slice_index(std::size_t k) const { return z0 + static_cast<int>(k) * gap; }
    /// Throws core::DataError unless gap >= 1 and every slice fits in `depth`.
    void validate(int depth) const;
};

/// Tight boxes around each 8-connected component of non-background pixels,
/// in raster order of each component's first pixel.
std::vector<core::BoundingBox> component_boxes(const core::SegMask& mask, int background_class = 0,
                                               int box_class_id = 0);

/// Assembles a multi-layer sample from co-registered volumes. Band k's raster
/// and mask are the volume slices at z0 + k * gap; its boxes come from the
/// connected components of that mask slice.
core::MultiLayerSample build_multilayer_from_volumes(const std::map<std::string, Volume>& modalities,
                                                     const ClassVolume& gt, const SliceGapConfig& cfg,
                                                     const std::vector<std::string>& class_set,
                                                     std::string sample_id, core::Timestamp timestamp = {});

}  // namespace mlmt::synthetic
