#include "mlmt/detect/model.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <set>
#include <stdexcept>

#include "mlmt/detect/loss.hpp"

namespace mlmt::detect {

namespace nn = torch::nn;
namespace F = torch::nn::functional;
using core::DataError;

namespace {

struct ConvBlockImpl : nn::Module {
    ConvBlockImpl(int in, int out, bool pool)
        : conv(register_module("conv", nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)))), pool(pool)
    {
    }
    torch::Tensor forward(const torch::Tensor& x)
    {
        auto y = torch::relu(conv->forward(x));
        return pool ? F::max_pool2d(y, F::MaxPool2dFuncOptions(2)) : y;
    }
    nn::Conv2d conv;
    bool pool;
};
TORCH_MODULE(ConvBlock);

struct RpnHeadImpl : nn::Module {
    RpnHeadImpl(int in, int mid, int anchors)
        : conv(register_module("conv", nn::Conv2d(nn::Conv2dOptions(in, mid, 3).padding(1)))),
          cls(register_module("cls", nn::Conv2d(nn::Conv2dOptions(mid, anchors, 1)))),
          reg(register_module("reg", nn::Conv2d(nn::Conv2dOptions(mid, 4 * anchors, 1))))
    {
        // Small initial offsets keep early proposals near their anchors.
        nn::init::normal_(reg->weight, 0.0, 0.001);
        nn::init::zeros_(reg->bias);
    }
    nn::Conv2d conv, cls, reg;
};
TORCH_MODULE(RpnHead);

struct RoiHeadImpl : nn::Module {
    RoiHeadImpl(int in, int hidden)
        : fc(register_module("fc", nn::Linear(in, hidden))),
          cls(register_module("cls", nn::Linear(hidden, 1))),
          reg(register_module("reg", nn::Linear(hidden, 4)))
    {
        nn::init::normal_(reg->weight, 0.0, 0.001);
        nn::init::zeros_(reg->bias);
    }
    nn::Linear fc, cls, reg;
};
TORCH_MODULE(RoiHead);

torch::Tensor deltas_tensor(const std::vector<Deltas>& d)
{
    auto t = torch::empty({static_cast<int64_t>(d.size()), 4}, torch::kFloat32);
    auto a = t.accessor<float, 2>();
    for (std::size_t i = 0; i < d.size(); ++i)
        for (int k = 0; k < 4; ++k) a[static_cast<int64_t>(i)][k] = static_cast<float>(d[i][k]);
    return t;
}

torch::Tensor labels_tensor(const std::vector<AnchorLabel>& labels)
{
    auto t = torch::empty({static_cast<int64_t>(labels.size())}, torch::kFloat32);
    auto a = t.accessor<float, 1>();
    for (std::size_t i = 0; i < labels.size(); ++i) a[static_cast<int64_t>(i)] = static_cast<float>(labels[i]);
    return t;
}

}  // namespace

void DetectorConfig::validate() const
{
    if (bands.empty()) throw DataError("detector needs at least one band");
    if (std::set<std::string>(bands.begin(), bands.end()).size() != bands.size())
        throw DataError("detector band names must be unique");
    if (input_channels < 1) throw DataError("input_channels must be positive");
    if (branch_channels.empty()) throw DataError("branch_channels must be non-empty");
    anchors.validate();
    if (anchors.feature_stride != stride())
        throw DataError("anchor stride " + std::to_string(anchors.feature_stride) + " differs from the branch stride " +
                        std::to_string(stride()));
    if (!(0 <= rpn_neg_iou && rpn_neg_iou < rpn_pos_iou && rpn_pos_iou <= 1))
        throw DataError("need 0 <= rpn_neg_iou < rpn_pos_iou <= 1");
    if (rpn_batch < 1 || roi_batch < 1 || roi_size < 1 || head_hidden < 1 || rpn_channels < 1)
        throw DataError("detector sizes must be positive");
    if (!(lambda >= 0) || !(head_lambda >= 0)) throw DataError("lambda must be non-negative");
}

DetectorImpl::DetectorImpl(DetectorConfig cfg) : cfg_(std::move(cfg))
{
    cfg_.validate();
    const int nb = static_cast<int>(cfg_.bands.size());
    const auto& ch = cfg_.branch_channels;
    branches_ = register_module("branches", nn::ModuleList());
    trunk_ = register_module("trunk", nn::Sequential());
    int fused_channels = 0;
    if (cfg_.fusion.stage == FusionStage::late) {
        for (int b = 0; b < nb; ++b) {
            nn::Sequential branch;
            int in = cfg_.input_channels;
            for (std::size_t k = 0; k < ch.size(); ++k) {
                branch->push_back(ConvBlock(in, ch[k], k + 1 < ch.size()));
                in = ch[k];
            }
            branches_->push_back(branch);
        }
        fused_channels = cfg_.fusion.fused_channels(ch.back(), nb);
    } else {
        for (int b = 0; b < nb; ++b)
            branches_->push_back(nn::Sequential(ConvBlock(cfg_.input_channels, ch[0], ch.size() > 1)));
        int in = cfg_.fusion.fused_channels(ch[0], nb);
        for (std::size_t k = 1; k < ch.size(); ++k) {
            trunk_->push_back(ConvBlock(in, ch[k], k + 1 < ch.size()));
            in = ch[k];
        }
        fused_channels = in;
    }
    rpn_ = register_module("rpn", nn::ModuleList());
    head_ = register_module("head", nn::ModuleList());
    const int a = static_cast<int>(cfg_.anchors.per_location());
    for (int b = 0; b < nb; ++b) {
        rpn_->push_back(RpnHead(fused_channels, cfg_.rpn_channels, a));
        head_->push_back(RoiHead(fused_channels * cfg_.roi_size * cfg_.roi_size, cfg_.head_hidden));
    }
}

std::vector<std::string> DetectorImpl::stage_prefixes(Stage s)
{
    switch (s) {
    case Stage::feature_extraction: return {"branches.", "trunk."};
    case Stage::rpn: return {"rpn."};
    case Stage::detection: return {"head."};
    }
    return {};
}

torch::Tensor DetectorImpl::features(const torch::Tensor& images)
{
    const auto nb = static_cast<int64_t>(cfg_.bands.size());
    if (images.dim() != 4 || images.size(1) != nb) throw DataError("detector input must be [N, bands, H, W]");
    std::vector<torch::Tensor> maps;
    for (int64_t b = 0; b < nb; ++b) {
        auto x = images.slice(1, b, b + 1);
        if (cfg_.input_channels > 1) x = x.expand({-1, cfg_.input_channels, -1, -1});
        maps.push_back(branches_[b]->as<nn::Sequential>()->forward(x));
    }
    auto fused = fuse_features(maps, cfg_.fusion.op);
    if (cfg_.fusion.stage == FusionStage::early && !trunk_->is_empty()) fused = trunk_->forward(fused);
    return fused;
}

std::pair<torch::Tensor, torch::Tensor> DetectorImpl::rpn_outputs(const torch::Tensor& fused, std::size_t band)
{
    auto* head = rpn_[band]->as<RpnHeadImpl>();
    const auto h = torch::relu(head->conv->forward(fused));
    const auto n = fused.size(0);
    const auto a = static_cast<int64_t>(cfg_.anchors.per_location());
    auto probs = torch::sigmoid(head->cls->forward(h)).permute({0, 2, 3, 1}).reshape({n, -1});
    auto deltas = head->reg->forward(h)
                      .view({n, a, 4, fused.size(2), fused.size(3)})
                      .permute({0, 3, 4, 1, 2})
                      .reshape({n, -1, 4});
    return {probs, deltas};
}

std::pair<torch::Tensor, torch::Tensor> DetectorImpl::head_outputs(const torch::Tensor& fused, int64_t n,
                                                                  std::size_t band, const std::vector<BoxF>& rois)
{
    const auto r = static_cast<int64_t>(rois.size());
    const int p = cfg_.roi_size;
    const double fh = static_cast<double>(fused.size(2));
    const double fw = static_cast<double>(fused.size(3));
    const double s = cfg_.stride();
    // Bilinear samples at the centres of a p x p grid over each RoI.
    auto grid = torch::empty({1, r * p, p, 2}, torch::kFloat32);
    auto g = grid.accessor<float, 4>();
    for (int64_t i = 0; i < r; ++i) {
        const auto& box = rois[static_cast<std::size_t>(i)];
        for (int v = 0; v < p; ++v) {
            const double y = box.y + (v + 0.5) * box.h / p;
            for (int u = 0; u < p; ++u) {
                const double x = box.x + (u + 0.5) * box.w / p;
                g[0][i * p + v][u][0] = static_cast<float>(2.0 * (x / s) / fw - 1.0);
                g[0][i * p + v][u][1] = static_cast<float>(2.0 * (y / s) / fh - 1.0);
            }
        }
    }
    const auto map = fused.slice(0, n, n + 1);
    auto sampled = F::grid_sample(map, grid.to(map.dtype()),
                                  F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kZeros).align_corners(false));
    // [1, C, r*p, p] -> [r, C*p*p]
    const auto c = fused.size(1);
    auto feats = sampled.view({c, r, p, p}).permute({1, 0, 2, 3}).reshape({r, -1});
    auto* head = head_[band]->as<RoiHeadImpl>();
    const auto hidden = torch::relu(head->fc->forward(feats));
    return {torch::sigmoid(head->cls->forward(hidden)).view({r}), head->reg->forward(hidden)};
}

std::vector<BoxF> DetectorImpl::anchors_for(int height, int width) const
{
    const int s = cfg_.stride();
    return generate_anchors(cfg_.anchors, height / s, width / s);
}

std::vector<Proposal> DetectorImpl::band_proposals(const torch::Tensor& probs, const torch::Tensor& deltas, int64_t n,
                                                   std::size_t band, int height, int width, int top_n) const
{
    const auto anchors = anchors_for(height, width);
    const auto pr = probs[n].detach().to(torch::kFloat64).contiguous();
    const auto dl = deltas[n].detach().to(torch::kFloat64).contiguous();
    const double* pp = pr.data_ptr<double>();
    const double* dp = dl.data_ptr<double>();
    std::vector<int> order(anchors.size());
    std::iota(order.begin(), order.end(), 0);
    const auto pre = std::min<std::size_t>(order.size(), static_cast<std::size_t>(cfg_.pre_nms_top_n));
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(pre), order.end(),
                      [&](int a, int b) { return pp[a] > pp[b] || (pp[a] == pp[b] && a < b); });
    std::vector<BoxF> boxes;
    std::vector<double> scores;
    for (std::size_t k = 0; k < pre; ++k) {
        const int i = order[k];
        const Deltas d{dp[4 * i], dp[4 * i + 1], dp[4 * i + 2], dp[4 * i + 3]};
        const auto box = clip(decode(anchors[static_cast<std::size_t>(i)], d), width, height);
        if (box.w < cfg_.min_proposal_size || box.h < cfg_.min_proposal_size) continue;
        boxes.push_back(box);
        scores.push_back(pp[i]);
    }
    std::vector<Proposal> out;
    for (int i : nms(boxes, scores, cfg_.rpn_nms)) {
        if (static_cast<int>(out.size()) >= top_n) break;
        out.push_back({boxes[static_cast<std::size_t>(i)], scores[static_cast<std::size_t>(i)], cfg_.bands[band]});
    }
    return out;
}

DetectorLosses DetectorImpl::losses(const torch::Tensor& images, const std::vector<BandBoxes>& gts,
                                    std::mt19937_64& rng)
{
    const auto n_img = images.size(0);
    if (static_cast<int64_t>(gts.size()) != n_img) throw DataError("one ground-truth map per image required");
    const int height = static_cast<int>(images.size(2));
    const int width = static_cast<int>(images.size(3));
    const auto fused = features(images);
    const auto anchors = anchors_for(height, width);
    const auto& scale = cfg_.head_delta_scale;

    torch::Tensor rpn_total;
    torch::Tensor head_total;
    for (std::size_t b = 0; b < cfg_.bands.size(); ++b) {
        const auto& band = cfg_.bands[b];
        auto [probs, deltas] = rpn_outputs(fused, b);

        std::vector<torch::Tensor> lab, tgt;
        double n_cls = 0;
        std::vector<torch::Tensor> roi_probs, roi_deltas, roi_labels, roi_targets;
        for (int64_t n = 0; n < n_img; ++n) {
            const auto& gt = gts[static_cast<std::size_t>(n)].at(band);
            auto targets = assign_rpn_targets(anchors, gt, cfg_.rpn_pos_iou, cfg_.rpn_neg_iou);
            n_cls += subsample_labels(targets.labels, cfg_.rpn_batch, cfg_.rpn_positive_fraction, rng);
            lab.push_back(labels_tensor(targets.labels));
            tgt.push_back(deltas_tensor(targets.deltas));

            // RoIs: this band's own proposals plus its GT boxes.
            std::vector<BoxF> rois;
            for (const auto& p : band_proposals(probs, deltas, n, b, height, width, cfg_.post_nms_top_n_train))
                rois.push_back(p.box);
            for (const auto& g : gt) rois.push_back(to_boxf(g));
            std::vector<AnchorLabel> rl(rois.size(), AnchorLabel::negative);
            std::vector<Deltas> rd(rois.size(), Deltas{0, 0, 0, 0});
            for (std::size_t i = 0; i < rois.size(); ++i) {
                double best = 0;
                int arg = -1;
                for (std::size_t j = 0; j < gt.size(); ++j) {
                    const double v = iou(rois[i], to_boxf(gt[j]));
                    if (v > best) best = v, arg = static_cast<int>(j);
                }
                if (arg >= 0 && best >= cfg_.roi_fg_iou) {
                    rl[i] = AnchorLabel::positive;
                    rd[i] = encode(rois[i], to_boxf(gt[static_cast<std::size_t>(arg)]));
                    for (int k = 0; k < 4; ++k) rd[i][k] /= scale[k];
                }
            }
            subsample_labels(rl, cfg_.roi_batch, cfg_.roi_positive_fraction, rng);
            std::vector<BoxF> kept;
            std::vector<AnchorLabel> kept_labels;
            std::vector<Deltas> kept_deltas;
            for (std::size_t i = 0; i < rois.size(); ++i) {
                if (rl[i] == AnchorLabel::ignore) continue;
                kept.push_back(rois[i]);
                kept_labels.push_back(rl[i]);
                kept_deltas.push_back(rd[i]);
            }
            if (kept.empty()) continue;
            auto [hp, hd] = head_outputs(fused, n, b, kept);
            roi_probs.push_back(hp);
            roi_deltas.push_back(hd);
            roi_labels.push_back(labels_tensor(kept_labels));
            roi_targets.push_back(deltas_tensor(kept_deltas));
        }

        BandDetectionTerms rpn_terms{probs.reshape({-1}), deltas.reshape({-1, 4}), torch::cat(lab), torch::cat(tgt),
                                     std::max(1.0, n_cls), static_cast<double>(anchors.size() * n_img)};
        auto rpn_loss = band_detection_loss(rpn_terms, cfg_.lambda);
        rpn_total = rpn_total.defined() ? rpn_total + rpn_loss : rpn_loss;

        if (!roi_probs.empty()) {
            auto all_p = torch::cat(roi_probs);
            const double n_roi = static_cast<double>(all_p.size(0));
            BandDetectionTerms head_terms{all_p, torch::cat(roi_deltas), torch::cat(roi_labels),
                                          torch::cat(roi_targets), n_roi, n_roi};
            auto head_loss = band_detection_loss(head_terms, cfg_.head_lambda);
            head_total = head_total.defined() ? head_total + head_loss : head_loss;
        }
    }
    if (!head_total.defined()) head_total = torch::zeros({}, fused.options());
    return {rpn_total, head_total};
}

DetectionTrace DetectorImpl::run(const torch::Tensor& image, RunMode mode)
{
    torch::NoGradGuard guard;
    const int height = static_cast<int>(image.size(1));
    const int width = static_cast<int>(image.size(2));
    const auto fused = features(image.unsqueeze(0));
    const int top_n = mode == RunMode::train ? cfg_.post_nms_top_n_train : cfg_.post_nms_top_n_test;

    BandProposals own;
    for (std::size_t b = 0; b < cfg_.bands.size(); ++b) {
        auto [probs, deltas] = rpn_outputs(fused, b);
        own.emplace_back(cfg_.bands[b], band_proposals(probs, deltas, 0, b, height, width, top_n));
    }
    DetectionTrace trace;
    trace.proposals = combine_proposals(own, mode);
    const auto& scale = cfg_.head_delta_scale;
    for (std::size_t b = 0; b < cfg_.bands.size(); ++b) {
        const auto& [band, props] = trace.proposals[b];
        auto& out = trace.detections[band];
        if (props.empty()) continue;
        std::vector<BoxF> rois;
        for (const auto& p : props) rois.push_back(p.box);
        auto [probs, deltas] = head_outputs(fused, 0, b, rois);
        const auto pr = probs.to(torch::kFloat64).contiguous();
        const auto dl = deltas.to(torch::kFloat64).contiguous();
        std::vector<BoxF> boxes;
        std::vector<double> scores;
        for (std::size_t i = 0; i < rois.size(); ++i) {
            const double score = pr.data_ptr<double>()[i];
            if (score < cfg_.score_threshold) continue;
            const double* d = dl.data_ptr<double>() + 4 * i;
            const Deltas delta{d[0] * scale[0], d[1] * scale[1], d[2] * scale[2], d[3] * scale[3]};
            const auto box = clip(decode(rois[i], delta), width, height);
            if (box.w <= 0 || box.h <= 0) continue;
            boxes.push_back(box);
            scores.push_back(score);
        }
        for (int i : nms(boxes, scores, cfg_.final_nms)) {
            auto px = to_pixel_box(boxes[static_cast<std::size_t>(i)], width, height);
            px.score = scores[static_cast<std::size_t>(i)];
            out.push_back(px);
        }
    }
    return trace;
}

torch::Tensor sample_tensor(const core::MultiLayerSample& sample, const std::vector<std::string>& bands)
{
    const int h = sample.height();
    const int w = sample.width();
    auto t = torch::empty({static_cast<int64_t>(bands.size()), h, w}, torch::kFloat32);
    for (std::size_t b = 0; b < bands.size(); ++b) {
        auto it = sample.images.find(bands[b]);
        if (it == sample.images.end()) throw DataError("sample lacks band required by the model", sample.sample_id, bands[b]);
        if (it->second.height() != h || it->second.width() != w)
            throw DataError("band rasters differ in size", sample.sample_id, bands[b]);
        std::memcpy(t[static_cast<int64_t>(b)].data_ptr<float>(), it->second.data().data(),
                    sizeof(float) * static_cast<std::size_t>(h) * w);
    }
    return t;
}

BandBoxes detect_forward(const core::MultiLayerSample& sample, Detector& model, RunMode mode)
{
    std::set<std::string> have;
    for (const auto& b : sample.bands) have.insert(b.name);
    const auto& want = model->config().bands;
    for (const auto& b : want)
        if (!have.count(b)) throw DataError("sample lacks a band the model needs", sample.sample_id, b);
    return model->run(sample_tensor(sample, want), mode).detections;
}

void assemble_best(Detector& model, const StageCheckpointSet& store)
{
    for (Stage s : kStages) {
        const auto& snap = store[s];
        if (snap.epoch < 0) continue;
        core::load_module_state(*model, snap.weights, DetectorImpl::stage_prefixes(s));
    }
}

}  // namespace mlmt::detect
