#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mlmt/core/types.hpp"

namespace mlmt::core {

/// Reads a single-channel PNG. 16-bit data is scaled by 1/65535, 8-bit by 1/255.
Raster read_raster_png(const std::filesystem::path& path);

/// Writes a 16-bit grayscale PNG; values are clamped to [0, 1] first.
void write_raster_png(const Raster& raster, const std::filesystem::path& path);

/// Class-index mask as 8-bit PNG.
SegMask read_mask_png(const std::filesystem::path& path, std::vector<std::string> class_set);
void write_mask_png(const SegMask& mask, const std::filesystem::path& path);

/// 8-bit display PNG, linearly stretched between the given intensity
/// percentiles. Used only for viewing; never feeds back into geometry.
std::vector<unsigned char> encode_display_png(const Raster& raster, double low_percentile = 0.0,
                                              double high_percentile = 100.0);

/// Boxes file: one `x,y,w,h,class_id[,score]` line per box.
std::vector<BoundingBox> read_boxes_csv(const std::filesystem::path& path);
void write_boxes_csv(const std::vector<BoundingBox>& boxes, const std::filesystem::path& path);
std::vector<BoundingBox> parse_boxes_csv(const std::string& text, const std::string& origin = "<string>");
std::string format_boxes_csv(const std::vector<BoundingBox>& boxes);

/// Shortest decimal form that round-trips the double exactly.
std::string format_real(double value);

/// Linear-interpolation percentile (same convention as numpy's default).
double percentile(std::vector<float> values, double pct);

}  // namespace mlmt::core
