#include "mlmt/core/types.hpp"

#include <algorithm>
#include <set>

namespace mlmt::core {

DataError::DataError(const std::string& what, std::string sample_id, std::string band)
    : std::runtime_error([&] {
          std::string msg = what;
          if (!sample_id.empty()) msg += " [sample " + sample_id + "]";
          if (!band.empty()) msg += " [band " + band + "]";
          return msg;
      }()),
      sample_id_(std::move(sample_id)),
      band_(std::move(band))
{
}

void validate_bands(const std::vector<BandId>& bands)
{
    std::set<std::string> seen;
    for (std::size_t i = 0; i < bands.size(); ++i) {
        if (bands[i].name.empty()) throw DataError("band name is empty");
        if (!seen.insert(bands[i].name).second)
            throw DataError("duplicate band name", {}, bands[i].name);
        if (i > 0 && bands[i].layer_index <= bands[i - 1].layer_index)
            throw DataError("layer_index must strictly increase with band order", {}, bands[i].name);
    }
}

long intersection_area(const BoundingBox& a, const BoundingBox& b)
{
    const long iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
    const long ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
    if (iw <= 0 || ih <= 0) return 0;
    return iw * ih;
}

double iou(const BoundingBox& a, const BoundingBox& b)
{
    const long inter = intersection_area(a, b);
    const long uni = a.area() + b.area() - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

Raster::Raster(int height, int width, float fill)
    : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width, fill)
{
    if (height < 0 || width < 0) throw DataError("negative raster size");
}

Raster::Raster(int height, int width, std::vector<float> data)
    : height_(height), width_(width), data_(std::move(data))
{
    if (data_.size() != static_cast<std::size_t>(height) * width)
        throw DataError("raster data size does not match its shape");
}

SegMask::SegMask(int h, int w, std::vector<std::string> classes, std::uint8_t fill)
    : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill), class_set(std::move(classes))
{
}

void SegMask::validate() const
{
    if (labels.size() != static_cast<std::size_t>(height) * width)
        throw DataError("mask data size does not match its shape");
    const auto n = class_set.size();
    for (auto v : labels)
        if (v >= n) throw DataError("mask label " + std::to_string(v) + " outside class set");
}

std::string Timestamp::to_string() const
{
    if (const auto* tick = std::get_if<std::int64_t>(&value)) return std::to_string(*tick);
    return std::get<std::string>(value);
}

int MultiLayerSample::height() const
{
    return images.empty() ? 0 : images.begin()->second.height();
}

int MultiLayerSample::width() const
{
    return images.empty() ? 0 : images.begin()->second.width();
}

void MultiLayerSample::validate() const
{
    validate_bands(bands);
    if (bands.empty()) throw DataError("sample has no bands", sample_id);
    const int h = height();
    const int w = width();
    for (const auto& band : bands) {
        auto it = images.find(band.name);
        if (it == images.end()) throw DataError("missing band image", sample_id, band.name);
        if (it->second.height() != h || it->second.width() != w)
            throw DataError("band rasters differ in size", sample_id, band.name);
    }
    if (images.size() != bands.size()) throw DataError("image set does not match band list", sample_id);
    for (const auto& [name, boxes] : detections) {
        if (!images.count(name)) throw DataError("boxes for undeclared band", sample_id, name);
        for (const auto& b : boxes) {
            if (!b.valid()) throw DataError("box with non-positive extent", sample_id, name);
            if (!b.within(w, h)) throw DataError("box outside image bounds", sample_id, name);
        }
    }
    for (const auto& [name, mask] : masks) {
        if (!images.count(name)) throw DataError("mask for undeclared band", sample_id, name);
        if (mask.height != h || mask.width != w) throw DataError("mask shape differs from image", sample_id, name);
        try {
            mask.validate();
        } catch (const DataError& e) {
            throw DataError(e.what(), sample_id, name);
        }
    }
}

}  // namespace mlmt::core
