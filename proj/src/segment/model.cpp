#include "mlmt/segment/model.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include "mlmt/core/resample.hpp"

namespace mlmt::segment {

namespace nn = torch::nn;
namespace F = torch::nn::functional;
using core::DataError;
using detect::FusionOp;
using detect::FusionStage;

namespace {

struct DoubleConvImpl : nn::Module {
    DoubleConvImpl(int in, int out)
        : a(register_module("a", nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)))),
          b(register_module("b", nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1))))
    {
    }
    torch::Tensor forward(const torch::Tensor& x) { return torch::relu(b->forward(torch::relu(a->forward(x)))); }
    nn::Conv2d a, b;
};
TORCH_MODULE(DoubleConv);

struct UpBlockImpl : nn::Module {
    UpBlockImpl(int in, int skip, int out)
        : up(register_module("up", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, 2).stride(2)))),
          conv(register_module("conv", DoubleConv(out + skip, out)))
    {
    }
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& skip)
    {
        return conv->forward(torch::cat({up->forward(x), skip}, 1));
    }
    nn::ConvTranspose2d up;
    DoubleConv conv;
};
TORCH_MODULE(UpBlock);

struct DecoderImpl : nn::Module {
    nn::ModuleList ups{nullptr};
    nn::Conv2d out{nullptr};
};

}  // namespace

std::vector<double> SegModelConfig::weights() const
{
    return class_weights.empty() ? std::vector<double>(class_set.size(), 1.0) : class_weights;
}

void SegModelConfig::validate() const
{
    if (bands.empty()) throw DataError("segmentation model needs at least one band");
    if (std::set<std::string>(bands.begin(), bands.end()).size() != bands.size())
        throw DataError("segmentation band names must be unique");
    if (class_set.size() < 2) throw DataError("segmentation needs at least two classes");
    if (!class_weights.empty() && class_weights.size() != class_set.size())
        throw DataError("class_weights must have one entry per class");
    for (double w : class_weights)
        if (!(w > 0)) throw DataError("class weights must be positive");
    if (depth < 1 || base_channels < 1 || input_channels < 1) throw DataError("segmentation sizes must be positive");
    if (patch_size < 1 || patch_size % (1 << depth) != 0)
        throw DataError("patch_size must be a positive multiple of 2^depth");
}

SegNetImpl::SegNetImpl(SegModelConfig cfg) : cfg_(std::move(cfg))
{
    cfg_.validate();
    const int nb = static_cast<int>(cfg_.bands.size());
    const int d = cfg_.depth;
    auto width = [&](int level) { return cfg_.base_channels << level; };
    const bool late = cfg_.fusion.stage == FusionStage::late;

    encoders_ = register_module("enc", nn::ModuleList());
    shared_ = register_module("shared", nn::ModuleList());
    decoders_ = register_module("dec", nn::ModuleList());
    for (int b = 0; b < nb; ++b) {
        nn::ModuleList levels;
        const int n_levels = late ? d + 1 : 1;
        int in = cfg_.input_channels;
        for (int l = 0; l < n_levels; ++l) {
            levels->push_back(DoubleConv(in, width(l)));
            in = width(l);
        }
        encoders_->push_back(levels);
    }
    if (!late) {
        int in = cfg_.fusion.fused_channels(width(0), nb);
        for (int l = 1; l <= d; ++l) {
            shared_->push_back(DoubleConv(in, width(l)));
            in = width(l);
        }
    }
    const int fused = bottleneck_channels();
    const int n_classes = static_cast<int>(cfg_.class_set.size());
    for (int b = 0; b < nb; ++b) {
        nn::ModuleList ups;
        int in = fused;
        for (int l = d - 1; l >= 0; --l) {
            ups->push_back(UpBlock(in, width(l), width(l)));
            in = width(l);
        }
        auto dec = std::make_shared<DecoderImpl>();
        dec->ups = dec->register_module("ups", ups);
        dec->out = dec->register_module("out", nn::Conv2d(nn::Conv2dOptions(width(0), n_classes, 1)));
        decoders_->push_back(dec);
    }
}

int SegNetImpl::bottleneck_channels() const
{
    const int top = cfg_.base_channels << cfg_.depth;
    if (cfg_.fusion.stage == FusionStage::early) return top;
    return cfg_.fusion.fused_channels(top, static_cast<int>(cfg_.bands.size()));
}

SegNetImpl::Encoded SegNetImpl::encode(const torch::Tensor& images)
{
    const auto nb = static_cast<int64_t>(cfg_.bands.size());
    if (images.dim() != 4 || images.size(1) != nb) throw DataError("segmentation input must be [N, bands, P, P]");
    const int d = cfg_.depth;
    if (images.size(2) % (1 << d) != 0 || images.size(3) % (1 << d) != 0)
        throw DataError("patch side must be divisible by 2^depth");
    Encoded e;
    e.skips.resize(static_cast<std::size_t>(nb));
    std::vector<torch::Tensor> tops;
    for (int64_t b = 0; b < nb; ++b) {
        auto x = images.slice(1, b, b + 1);
        if (cfg_.input_channels > 1) x = x.expand({-1, cfg_.input_channels, -1, -1});
        auto levels = encoders_[b]->as<nn::ModuleList>();
        for (std::size_t l = 0; l < levels->size(); ++l) {
            if (l > 0) x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2));
            x = (*levels)[l]->as<DoubleConvImpl>()->forward(x);
            e.skips[static_cast<std::size_t>(b)].push_back(x);
        }
        tops.push_back(x);
    }
    auto fused = detect::fuse_features(tops, cfg_.fusion.op);
    if (cfg_.fusion.stage == FusionStage::early) {
        std::vector<torch::Tensor> shared_skips;
        for (std::size_t l = 0; l < shared_->size(); ++l) {
            fused = shared_[l]->as<DoubleConvImpl>()->forward(F::max_pool2d(fused, F::MaxPool2dFuncOptions(2)));
            shared_skips.push_back(fused);
        }
        // Deeper skips are common to all bands.
        for (auto& s : e.skips) s.insert(s.end(), shared_skips.begin(), shared_skips.end());
    }
    e.fused = fused;
    return e;
}

torch::Tensor SegNetImpl::bottleneck(const torch::Tensor& images) { return encode(images).fused; }

std::vector<torch::Tensor> SegNetImpl::forward(const torch::Tensor& images)
{
    const auto e = encode(images);
    const int d = cfg_.depth;
    std::vector<torch::Tensor> out;
    for (std::size_t b = 0; b < cfg_.bands.size(); ++b) {
        auto* dec = decoders_[b]->as<DecoderImpl>();
        auto x = e.fused;
        for (int k = 0; k < d; ++k) {
            const int level = d - 1 - k;
            x = dec->ups[static_cast<std::size_t>(k)]->as<UpBlockImpl>()->forward(x, e.skips[b][static_cast<std::size_t>(level)]);
        }
        out.push_back(dec->out->forward(x));
    }
    return out;
}

std::map<std::string, torch::Tensor> seg_forward(const std::map<std::string, core::Raster>& patches, SegNet& model)
{
    const auto& cfg = model->config();
    std::set<std::string> have;
    for (const auto& [band, r] : patches) have.insert(band);
    if (have != std::set<std::string>(cfg.bands.begin(), cfg.bands.end()))
        throw DataError("patch bands do not match the model's bands");
    const int p = patches.begin()->second.height();
    auto x = torch::empty({1, static_cast<int64_t>(cfg.bands.size()), p, p}, torch::kFloat32);
    for (std::size_t b = 0; b < cfg.bands.size(); ++b) {
        const auto& r = patches.at(cfg.bands[b]);
        if (r.height() != p || r.width() != p) throw DataError("patches must be square and equally sized", {}, cfg.bands[b]);
        std::memcpy(x[0][static_cast<int64_t>(b)].data_ptr<float>(), r.data().data(), sizeof(float) * r.data().size());
    }
    torch::NoGradGuard guard;
    const auto logits = model->forward(x);
    std::map<std::string, torch::Tensor> out;
    for (std::size_t b = 0; b < cfg.bands.size(); ++b) out[cfg.bands[b]] = torch::softmax(logits[b][0], 0);
    return out;
}

torch::Tensor crop_stack(const core::MultiLayerSample& sample, const std::vector<std::string>& bands,
                         const core::BoundingBox& box, int patch)
{
    auto t = torch::empty({static_cast<int64_t>(bands.size()), patch, patch}, torch::kFloat32);
    for (std::size_t b = 0; b < bands.size(); ++b) {
        auto it = sample.images.find(bands[b]);
        if (it == sample.images.end()) throw DataError("sample lacks band", sample.sample_id, bands[b]);
        const auto crop = core::crop_and_resize(it->second, box, patch);
        std::memcpy(t[static_cast<int64_t>(b)].data_ptr<float>(), crop.data().data(), sizeof(float) * crop.data().size());
    }
    return t;
}

std::map<std::string, core::SegMask> predict_masks(const core::MultiLayerSample& sample,
                                                   const std::map<std::string, std::vector<core::BoundingBox>>& boxes,
                                                   SegNet& model, int background_class)
{
    const auto& cfg = model->config();
    const int h = sample.height();
    const int w = sample.width();
    std::map<std::string, core::SegMask> masks;
    for (const auto& band : cfg.bands)
        masks[band] = core::SegMask(h, w, cfg.class_set, static_cast<std::uint8_t>(background_class));

    struct Job {
        std::size_t band;
        core::BoundingBox box;
        double score;
    };
    std::vector<Job> jobs;
    for (std::size_t b = 0; b < cfg.bands.size(); ++b) {
        auto it = boxes.find(cfg.bands[b]);
        if (it == boxes.end()) continue;
        for (const auto& box : it->second) {
            if (!box.valid() || !box.within(w, h))
                throw DataError("detection box lies outside the image", sample.sample_id, cfg.bands[b]);
            jobs.push_back({b, box, box.score.value_or(std::numeric_limits<double>::infinity())});
        }
    }
    if (jobs.empty()) return masks;
    std::stable_sort(jobs.begin(), jobs.end(), [](const Job& a, const Job& b) { return a.score < b.score; });

    const int p = cfg.patch_size;
    constexpr std::size_t kChunk = 16;
    torch::NoGradGuard guard;
    for (std::size_t start = 0; start < jobs.size(); start += kChunk) {
        const std::size_t end = std::min(jobs.size(), start + kChunk);
        std::vector<torch::Tensor> stacks;
        for (std::size_t k = start; k < end; ++k) stacks.push_back(crop_stack(sample, cfg.bands, jobs[k].box, p));
        const auto logits = model->forward(torch::stack(stacks));
        for (std::size_t k = start; k < end; ++k) {
            const auto& j = jobs[k];
            const auto labels =
                logits[j.band][static_cast<int64_t>(k - start)].argmax(0).to(torch::kUInt8).contiguous();
            std::vector<std::uint8_t> grid(labels.data_ptr<std::uint8_t>(),
                                           labels.data_ptr<std::uint8_t>() + labels.numel());
            const auto back = core::resize_labels_nearest(grid, p, p, j.box.h, j.box.w);
            auto& mask = masks[cfg.bands[j.band]];
            for (int y = 0; y < j.box.h; ++y)
                for (int x = 0; x < j.box.w; ++x)
                    mask.at(j.box.y + y, j.box.x + x) = back[static_cast<std::size_t>(y) * j.box.w + x];
        }
    }
    return masks;
}

}  // namespace mlmt::segment
