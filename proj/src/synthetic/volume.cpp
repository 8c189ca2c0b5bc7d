#include "mlmt/synthetic/volume.hpp"

#include <opencv2/imgproc.hpp>

namespace mlmt::synthetic {

using core::DataError;

core::Raster Volume::slice(int z) const
{
    if (z < 0 || z >= depth) throw DataError("slice index " + std::to_string(z) + " outside volume depth");
    const auto begin = data.begin() + static_cast<std::ptrdiff_t>(z) * height * width;
    return core::Raster(height, width, std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(height) * width));
}

core::SegMask ClassVolume::slice(int z, std::vector<std::string> class_set) const
{
    if (z < 0 || z >= depth) throw DataError("slice index " + std::to_string(z) + " outside volume depth");
    core::SegMask m(height, width, std::move(class_set));
    const auto begin = labels.begin() + static_cast<std::ptrdiff_t>(z) * height * width;
    std::copy(begin, begin + static_cast<std::ptrdiff_t>(height) * width, m.labels.begin());
    return m;
}

void SliceGapConfig::validate(int depth) const
{
    if (gap < 1) throw DataError("slice gap must be at least 1");
    if (band_order.empty()) throw DataError("slice gap config has no bands");
    if (z0 < 0) throw DataError("base slice must be non-negative");
    const int last = slice_index(band_order.size() - 1);
    if (last >= depth)
        throw DataError("slice gap overflow: last slice " + std::to_string(last) + " exceeds volume depth " +
                        std::to_string(depth));
}

std::vector<core::BoundingBox> component_boxes(const core::SegMask& mask, int background_class, int box_class_id)
{
    cv::Mat fg(mask.height, mask.width, CV_8U);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) fg.at<std::uint8_t>(y, x) = mask.at(y, x) != background_class ? 1 : 0;
    cv::Mat labels;
    cv::Mat stats;
    cv::Mat centroids;
    const int n = cv::connectedComponentsWithStats(fg, labels, stats, centroids, 8, CV_32S);

    // Label numbering depends on the scan algorithm; order by first pixel instead.
    std::vector<int> order;
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            const int l = labels.at<int>(y, x);
            if (l > 0 && !seen[l]) {
                seen[l] = 1;
                order.push_back(l);
            }
        }
    std::vector<core::BoundingBox> boxes;
    for (int i : order) {
        core::BoundingBox b;
        b.x = stats.at<int>(i, cv::CC_STAT_LEFT);
        b.y = stats.at<int>(i, cv::CC_STAT_TOP);
        b.w = stats.at<int>(i, cv::CC_STAT_WIDTH);
        b.h = stats.at<int>(i, cv::CC_STAT_HEIGHT);
        b.class_id = box_class_id;
        boxes.push_back(b);
    }
    return boxes;
}

core::MultiLayerSample build_multilayer_from_volumes(const std::map<std::string, Volume>& modalities,
                                                     const ClassVolume& gt, const SliceGapConfig& cfg,
                                                     const std::vector<std::string>& class_set,
                                                     std::string sample_id, core::Timestamp timestamp)
{
    cfg.validate(gt.depth);
    core::MultiLayerSample s;
    s.sample_id = std::move(sample_id);
    s.timestamp = std::move(timestamp);
    for (std::size_t k = 0; k < cfg.band_order.size(); ++k) {
        const auto& name = cfg.band_order[k];
        auto it = modalities.find(name);
        if (it == modalities.end()) throw DataError("no volume for modality", s.sample_id, name);
        if (!it->second.same_shape(gt.depth, gt.height, gt.width))
            throw DataError("modality volume shape differs from ground truth", s.sample_id, name);
        const int z = cfg.slice_index(k);
        s.bands.push_back(core::BandId{name, z});
        s.images[name] = it->second.slice(z);
        auto mask = gt.slice(z, class_set);
        s.detections[name] = component_boxes(mask);
        s.masks[name] = std::move(mask);
    }
    s.validate();
    return s;
}

}  // namespace mlmt::synthetic
