#include "mlmt/synthetic/weak_labels.hpp"

#include <opencv2/imgproc.hpp>

#include "mlmt/core/image_io.hpp"

namespace mlmt::synthetic {

using core::DataError;

void WeakLabelConfig::validate() const
{
    if (!(intensity_percentile > 0.0 && intensity_percentile < 100.0))
        throw DataError("weak-label percentile must lie in (0, 100)");
    if (morph_open_radius < 0 || morph_close_radius < 0) throw DataError("morphology radii must be non-negative");
    if (min_component_area < 0) throw DataError("minimum component area must be non-negative");
}

namespace {

cv::Mat disk(int radius)
{
    return cv::getStructuringElement(cv::MORPH_ELLIPSE, cv::Size(2 * radius + 1, 2 * radius + 1));
}

}  // namespace

core::SegMask make_weak_seg_labels(const core::Raster& image, const WeakLabelConfig& cfg)
{
    cfg.validate();
    const double threshold = core::percentile(image.data(), cfg.intensity_percentile);

    cv::Mat fg(image.height(), image.width(), CV_8U);
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x) fg.at<std::uint8_t>(y, x) = image.at(y, x) > threshold ? 1 : 0;

    cv::Mat cleaned = fg.clone();
    if (cfg.morph_open_radius > 0)
        cv::morphologyEx(cleaned, cleaned, cv::MORPH_OPEN, disk(cfg.morph_open_radius), cv::Point(-1, -1), 1,
                         cv::BORDER_CONSTANT, cv::Scalar(0));
    if (cfg.morph_close_radius > 0)
        cv::morphologyEx(cleaned, cleaned, cv::MORPH_CLOSE, disk(cfg.morph_close_radius), cv::Point(-1, -1), 1,
                         cv::BORDER_CONSTANT, cv::Scalar(0));
    // Closing can grow past the thresholded set; never label a pixel that
    // did not itself pass the threshold.
    cv::bitwise_and(cleaned, fg, cleaned);

    cv::Mat labels;
    cv::Mat stats;
    cv::Mat centroids;
    const int n = cv::connectedComponentsWithStats(cleaned, labels, stats, centroids, 8, CV_32S);
    std::vector<bool> keep(static_cast<std::size_t>(n), false);
    for (int i = 1; i < n; ++i) keep[i] = stats.at<int>(i, cv::CC_STAT_AREA) >= cfg.min_component_area;

    core::SegMask out(image.height(), image.width(), {"background", "object"});
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x) out.at(y, x) = keep[labels.at<int>(y, x)] ? 1 : 0;
    return out;
}

core::SegMask weaken_gt_masks(const core::SegMask& gt, int erosion_radius, int background_class)
{
    if (erosion_radius < 0) throw DataError("erosion radius must be non-negative");
    if (erosion_radius == 0) return gt;

    core::SegMask out(gt.height, gt.width, gt.class_set, static_cast<std::uint8_t>(background_class));
    const auto element = disk(erosion_radius);
    for (std::size_t c = 0; c < gt.class_set.size(); ++c) {
        if (static_cast<int>(c) == background_class) continue;
        cv::Mat region(gt.height, gt.width, CV_8U);
        bool any = false;
        for (int y = 0; y < gt.height; ++y) {
            for (int x = 0; x < gt.width; ++x) {
                const bool in = gt.at(y, x) == c;
                region.at<std::uint8_t>(y, x) = in ? 1 : 0;
                any = any || in;
            }
        }
        if (!any) continue;
        cv::erode(region, region, element, cv::Point(-1, -1), 1, cv::BORDER_CONSTANT, cv::Scalar(0));
        for (int y = 0; y < gt.height; ++y)
            for (int x = 0; x < gt.width; ++x)
                if (region.at<std::uint8_t>(y, x)) out.at(y, x) = static_cast<std::uint8_t>(c);
    }
    return out;
}

}  // namespace mlmt::synthetic
