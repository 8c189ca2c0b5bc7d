#include "mlmt/core/augment.hpp"

namespace mlmt::core {

Raster mirror_east_west(const Raster& r)
{
    Raster out(r.height(), r.width());
    for (int y = 0; y < r.height(); ++y)
        for (int x = 0; x < r.width(); ++x) out.at(y, x) = r.at(y, r.width() - 1 - x);
    return out;
}

Raster mirror_north_south(const Raster& r)
{
    Raster out(r.height(), r.width());
    for (int y = 0; y < r.height(); ++y)
        for (int x = 0; x < r.width(); ++x) out.at(y, x) = r.at(r.height() - 1 - y, x);
    return out;
}

SegMask mirror_east_west(const SegMask& m)
{
    SegMask out(m.height, m.width, m.class_set);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) out.at(y, x) = m.at(y, m.width - 1 - x);
    return out;
}

SegMask mirror_north_south(const SegMask& m)
{
    SegMask out(m.height, m.width, m.class_set);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) out.at(y, x) = m.at(m.height - 1 - y, x);
    return out;
}

BoundingBox mirror_east_west(const BoundingBox& b, int width)
{
    BoundingBox out = b;
    out.x = width - b.x - b.w;
    return out;
}

BoundingBox mirror_north_south(const BoundingBox& b, int height)
{
    BoundingBox out = b;
    out.y = height - b.y - b.h;
    return out;
}

MultiLayerSample mirror_sample(const MultiLayerSample& s, bool north_south, bool east_west)
{
    MultiLayerSample out = s;
    const int h = s.height();
    const int w = s.width();
    for (auto& [name, img] : out.images) {
        if (north_south) img = mirror_north_south(img);
        if (east_west) img = mirror_east_west(img);
    }
    for (auto& [name, boxes] : out.detections) {
        for (auto& b : boxes) {
            if (north_south) b = mirror_north_south(b, h);
            if (east_west) b = mirror_east_west(b, w);
        }
    }
    for (auto& [name, mask] : out.masks) {
        if (north_south) mask = mirror_north_south(mask);
        if (east_west) mask = mirror_east_west(mask);
    }
    return out;
}

std::vector<MultiLayerSample> augment(const MultiLayerSample& sample, const AugmentationSpec& spec)
{
    std::vector<MultiLayerSample> out{sample};
    if (spec.north_south) {
        out.push_back(mirror_sample(sample, true, false));
        out.back().sample_id += "_ns";
    }
    if (spec.east_west) {
        out.push_back(mirror_sample(sample, false, true));
        out.back().sample_id += "_ew";
    }
    if (spec.both) {
        out.push_back(mirror_sample(sample, true, true));
        out.back().sample_id += "_nsew";
    }
    return out;
}

}  // namespace mlmt::core
