#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace mlmt::core {

/// Raised when data violates a structural invariant. Carries the offending
/// sample and band when known so callers can point at the bad record.
class DataError : public std::runtime_error {
public:
    DataError(const std::string& what, std::string sample_id = {}, std::string band = {});

    const std::string& sample_id() const { return sample_id_; }
    const std::string& band() const { return band_; }

private:
    std::string sample_id_;
    std::string band_;
};

/// One image band. `layer_index` orders bands along the third spatial axis.
struct BandId {
    std::string name;
    int layer_index = 0;

    bool operator==(const BandId&) const = default;
};

/// Throws DataError unless names are unique and layer indices strictly increase.
void validate_bands(const std::vector<BandId>& bands);

/// Integer pixel box, top-left origin, half-open extents [x, x+w) x [y, y+h).
struct BoundingBox {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;
    int class_id = 0;
    std::optional<double> score;

    long area() const { return static_cast<long>(w) * h; }
    int right() const { return x + w; }
    int bottom() const { return y + h; }
    bool valid() const { return w > 0 && h > 0; }
    bool within(int width, int height) const
    {
        return x >= 0 && y >= 0 && right() <= width && bottom() <= height;
    }
    bool same_geometry(const BoundingBox& o) const
    {
        return x == o.x && y == o.y && w == o.w && h == o.h && class_id == o.class_id;
    }
    bool operator==(const BoundingBox&) const = default;
};

long intersection_area(const BoundingBox& a, const BoundingBox& b);
double iou(const BoundingBox& a, const BoundingBox& b);

/// Single-channel raster, row-major, intensities nominally in [0, 1].
class Raster {
public:
    Raster() = default;
    Raster(int height, int width, float fill = 0.0f);
    Raster(int height, int width, std::vector<float> data);

    int height() const { return height_; }
    int width() const { return width_; }
    bool empty() const { return data_.empty(); }

    float& at(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    float at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

    const std::vector<float>& data() const { return data_; }
    std::vector<float>& data() { return data_; }

    bool operator==(const Raster&) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<float> data_;
};

/// Per-pixel class indices plus the ordered class names they refer to.
struct SegMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> labels;
    std::vector<std::string> class_set;

    SegMask() = default;
    SegMask(int h, int w, std::vector<std::string> classes, std::uint8_t fill = 0);

    std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }

    /// Throws DataError if any label is outside the class set.
    void validate() const;

    bool operator==(const SegMask&) const = default;
};

/// Integer tick or ISO-8601 string. Ticks order numerically, strings
/// lexicographically; a tick always sorts before a string.
struct Timestamp {
    std::variant<std::int64_t, std::string> value{std::int64_t{0}};

    std::string to_string() const;
    auto operator<=>(const Timestamp&) const = default;
};

/// One time-matched, spatially aligned set of band images with per-band labels.
struct MultiLayerSample {
    std::string sample_id;
    Timestamp timestamp;
    std::vector<BandId> bands;
    std::map<std::string, Raster> images;
    std::map<std::string, std::vector<BoundingBox>> detections;
    std::map<std::string, SegMask> masks;

    int height() const;
    int width() const;

    /// Checks shared raster size, boxes inside the frame and mask shapes.
    void validate() const;
};

}  // namespace mlmt::core
