#include "mlmt/core/resample.hpp"

#include <torch/torch.h>

namespace mlmt::core {

namespace F = torch::nn::functional;

namespace {

void check_box(const BoundingBox& box, int width, int height, int target)
{
    if (target < 1) throw DataError("resize target must be at least 1");
    if (!box.valid()) throw DataError("crop box has non-positive extent");
    if (!box.within(width, height)) throw DataError("crop box lies outside the image");
}

}  // namespace

Raster crop_and_resize(const Raster& image, const BoundingBox& box, int target)
{
    check_box(box, image.width(), image.height(), target);
    auto full = torch::from_blob(const_cast<float*>(image.data().data()), {image.height(), image.width()},
                                 torch::kFloat32);
    auto crop = full.slice(0, box.y, box.bottom()).slice(1, box.x, box.right()).to(torch::kFloat64);
    auto resized = F::interpolate(crop.unsqueeze(0).unsqueeze(0),
                                  F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{target, target})
                                      .mode(torch::kBilinear)
                                      .align_corners(true))
                       .squeeze()
                       .to(torch::kFloat32)
                       .contiguous()
                       .reshape({-1});
    std::vector<float> data(resized.data_ptr<float>(), resized.data_ptr<float>() + resized.numel());
    return Raster(target, target, std::move(data));
}

std::vector<std::uint8_t> resize_labels_nearest(const std::vector<std::uint8_t>& labels, int src_h, int src_w,
                                                int dst_h, int dst_w)
{
    if (labels.size() != static_cast<std::size_t>(src_h) * src_w) throw DataError("label grid size mismatch");
    if (src_h == dst_h && src_w == dst_w) return labels;
    std::vector<std::uint8_t> out(static_cast<std::size_t>(dst_h) * dst_w);
    // floor(dst * src / dst_size), the same mapping as torch's "nearest".
    for (int y = 0; y < dst_h; ++y) {
        const int sy = std::min(src_h - 1, static_cast<int>(static_cast<long>(y) * src_h / dst_h));
        for (int x = 0; x < dst_w; ++x) {
            const int sx = std::min(src_w - 1, static_cast<int>(static_cast<long>(x) * src_w / dst_w));
            out[static_cast<std::size_t>(y) * dst_w + x] = labels[static_cast<std::size_t>(sy) * src_w + sx];
        }
    }
    return out;
}

std::vector<std::uint8_t> crop_and_resize_labels(const SegMask& mask, const BoundingBox& box, int target)
{
    check_box(box, mask.width, mask.height, target);
    std::vector<std::uint8_t> crop(static_cast<std::size_t>(box.w) * box.h);
    for (int y = 0; y < box.h; ++y)
        for (int x = 0; x < box.w; ++x) crop[static_cast<std::size_t>(y) * box.w + x] = mask.at(box.y + y, box.x + x);
    return resize_labels_nearest(crop, box.h, box.w, target, target);
}

}  // namespace mlmt::core
