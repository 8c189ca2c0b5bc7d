#include "mlmt/core/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

namespace mlmt::core {

namespace fs = std::filesystem;

Raster read_raster_png(const fs::path& path)
{
    if (!fs::exists(path)) throw DataError("missing file: " + path.string());
    const cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (mat.empty()) throw DataError("unreadable image: " + path.string());
    if (mat.channels() != 1) throw DataError("image is not single-channel: " + path.string());

    Raster out(mat.rows, mat.cols);
    if (mat.depth() == CV_16U) {
        for (int y = 0; y < mat.rows; ++y)
            for (int x = 0; x < mat.cols; ++x) out.at(y, x) = mat.at<std::uint16_t>(y, x) / 65535.0f;
    } else if (mat.depth() == CV_8U) {
        for (int y = 0; y < mat.rows; ++y)
            for (int x = 0; x < mat.cols; ++x) out.at(y, x) = mat.at<std::uint8_t>(y, x) / 255.0f;
    } else {
        throw DataError("unsupported image depth: " + path.string());
    }
    return out;
}

void write_raster_png(const Raster& raster, const fs::path& path)
{
    cv::Mat mat(raster.height(), raster.width(), CV_16U);
    for (int y = 0; y < raster.height(); ++y) {
        for (int x = 0; x < raster.width(); ++x) {
            const double v = std::clamp(static_cast<double>(raster.at(y, x)), 0.0, 1.0);
            mat.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(std::lround(v * 65535.0));
        }
    }
    if (!cv::imwrite(path.string(), mat)) throw DataError("cannot write image: " + path.string());
}

SegMask read_mask_png(const fs::path& path, std::vector<std::string> class_set)
{
    if (!fs::exists(path)) throw DataError("missing file: " + path.string());
    const cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (mat.empty() || mat.channels() != 1 || mat.depth() != CV_8U)
        throw DataError("mask must be a single-channel 8-bit PNG: " + path.string());
    SegMask mask(mat.rows, mat.cols, std::move(class_set));
    for (int y = 0; y < mat.rows; ++y)
        for (int x = 0; x < mat.cols; ++x) mask.at(y, x) = mat.at<std::uint8_t>(y, x);
    return mask;
}

void write_mask_png(const SegMask& mask, const fs::path& path)
{
    cv::Mat mat(mask.height, mask.width, CV_8U);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) mat.at<std::uint8_t>(y, x) = mask.at(y, x);
    if (!cv::imwrite(path.string(), mat)) throw DataError("cannot write mask: " + path.string());
}

double percentile(std::vector<float> values, double pct)
{
    if (values.empty()) return 0.0;
    pct = std::clamp(pct, 0.0, 100.0);
    const double rank = pct / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = std::min(lo + 1, values.size() - 1);
    std::nth_element(values.begin(), values.begin() + lo, values.end());
    const double vlo = values[lo];
    if (hi == lo) return vlo;
    const double vhi = *std::min_element(values.begin() + lo + 1, values.end());
    return vlo + (rank - static_cast<double>(lo)) * (vhi - vlo);
}

std::vector<unsigned char> encode_display_png(const Raster& raster, double low_percentile, double high_percentile)
{
    const double lo = percentile(raster.data(), low_percentile);
    const double hi = percentile(raster.data(), high_percentile);
    const double span = hi > lo ? hi - lo : 1.0;
    cv::Mat mat(raster.height(), raster.width(), CV_8U);
    for (int y = 0; y < raster.height(); ++y) {
        for (int x = 0; x < raster.width(); ++x) {
            const double v = std::clamp((raster.at(y, x) - lo) / span, 0.0, 1.0);
            mat.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    }
    std::vector<unsigned char> buf;
    cv::imencode(".png", mat, buf);
    return buf;
}

std::string format_real(double value)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

namespace {

int parse_int_field(std::string_view field, const std::string& origin, int line)
{
    int v = 0;
    auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc{} || res.ptr != field.data() + field.size())
        throw DataError("malformed integer '" + std::string(field) + "' at " + origin + ":" + std::to_string(line));
    return v;
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

}  // namespace

std::vector<BoundingBox> parse_boxes_csv(const std::string& text, const std::string& origin)
{
    std::vector<BoundingBox> boxes;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto line = trim(raw);
        if (line.empty()) continue;
        std::vector<std::string_view> fields;
        std::size_t start = 0;
        while (true) {
            const auto comma = line.find(',', start);
            fields.push_back(trim(line.substr(start, comma - start)));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (fields.size() != 5 && fields.size() != 6)
            throw DataError("expected x,y,w,h,class_id[,score] at " + origin + ":" + std::to_string(line_no));
        BoundingBox b;
        b.x = parse_int_field(fields[0], origin, line_no);
        b.y = parse_int_field(fields[1], origin, line_no);
        b.w = parse_int_field(fields[2], origin, line_no);
        b.h = parse_int_field(fields[3], origin, line_no);
        b.class_id = parse_int_field(fields[4], origin, line_no);
        if (fields.size() == 6) {
            double s = 0.0;
            auto res = std::from_chars(fields[5].data(), fields[5].data() + fields[5].size(), s);
            if (res.ec != std::errc{} || res.ptr != fields[5].data() + fields[5].size())
                throw DataError("malformed score at " + origin + ":" + std::to_string(line_no));
            b.score = s;
        }
        if (!b.valid()) throw DataError("box with non-positive extent at " + origin + ":" + std::to_string(line_no));
        boxes.push_back(b);
    }
    return boxes;
}

std::string format_boxes_csv(const std::vector<BoundingBox>& boxes)
{
    std::string out;
    for (const auto& b : boxes) {
        out += std::to_string(b.x) + ',' + std::to_string(b.y) + ',' + std::to_string(b.w) + ',' +
               std::to_string(b.h) + ',' + std::to_string(b.class_id);
        if (b.score) out += ',' + format_real(*b.score);
        out += '\n';
    }
    return out;
}

std::vector<BoundingBox> read_boxes_csv(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw DataError("missing file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_boxes_csv(ss.str(), path.string());
}

void write_boxes_csv(const std::vector<BoundingBox>& boxes, const fs::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write boxes file: " + path.string());
    out << format_boxes_csv(boxes);
}

}  // namespace mlmt::core
