#include "../common/doctest_torch.hpp"

#include <cmath>
#include <random>

#include "mlmt/core/tensor_io.hpp"
#include "mlmt/segment/loss.hpp"
#include "mlmt/segment/model.hpp"
#include "mlmt/synthetic/blobs.hpp"
#include "../common/gradcheck.hpp"

using namespace mlmt;
using namespace mlmt::segment;

namespace {

SegModelConfig small_config(std::vector<std::string> bands, detect::FusionSpec fusion = {})
{
    SegModelConfig cfg;
    cfg.bands = std::move(bands);
    cfg.depth = 2;
    cfg.base_channels = 4;
    cfg.fusion = fusion;
    cfg.class_set = {"bg", "shell", "core"};
    cfg.patch_size = 16;
    return cfg;
}

core::MultiLayerSample toy_sample(const std::vector<std::string>& bands, int h, int w, unsigned seed)
{
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> u;
    core::MultiLayerSample s;
    s.sample_id = "toy";
    int layer = 0;
    for (const auto& b : bands) {
        s.bands.push_back({b, layer++});
        core::Raster r(h, w);
        for (auto& v : r.data()) v = u(rng);
        s.images[b] = r;
    }
    return s;
}

}  // namespace

TEST_CASE("seg_forward gives normalised per-band probabilities")
{
    torch::manual_seed(1);
    auto cfg = small_config({"a", "b"});
    SegNet net(cfg);
    std::map<std::string, core::Raster> patches;
    const auto s = toy_sample(cfg.bands, 16, 16, 3);
    for (const auto& b : cfg.bands) patches[b] = s.images.at(b);
    const auto out = seg_forward(patches, net);
    REQUIRE(out.size() == 2);
    for (const auto& [band, probs] : out) {
        CHECK(probs.sizes() == torch::IntArrayRef({3, 16, 16}));
        CHECK((probs.sum(0) - 1).abs().max().item<double>() <= 1e-6);
    }
    patches.erase("b");
    CHECK_THROWS_AS(seg_forward(patches, net), core::DataError);
}

TEST_CASE("additive fusion with a silent second band matches a single branch")
{
    torch::manual_seed(2);
    SegNet two(small_config({"a", "b"}, {detect::FusionStage::late, detect::FusionOp::add}));
    SegNet one(small_config({"a"}, {detect::FusionStage::late, detect::FusionOp::add}));
    {
        torch::NoGradGuard g;
        for (auto& p : two->named_parameters())
            if (p.key().rfind("enc.1.", 0) == 0) p.value().zero_();
    }
    core::NamedTensors copy;
    for (const auto& [name, t] : core::module_state(*two))
        if (name.rfind("enc.0.", 0) == 0 || name.rfind("dec.0.", 0) == 0) copy.emplace_back(name, t);
    core::load_module_state(*one, copy);

    const auto x = torch::rand({2, 2, 16, 16});
    torch::NoGradGuard g;
    const auto a = two->forward(x)[0];
    const auto b = one->forward(x.slice(1, 0, 1))[0];
    CHECK(torch::allclose(a, b, 1e-6, 1e-6));
}

TEST_CASE("bottleneck width under concatenation")
{
    auto cfg4 = small_config({"a", "b", "c", "d"});
    auto cfg1 = small_config({"a"});
    SegNet four(cfg4);
    SegNet one(cfg1);
    CHECK(four->bottleneck_channels() == 4 * one->bottleneck_channels());
    torch::NoGradGuard g;
    CHECK(four->bottleneck(torch::rand({1, 4, 16, 16})).size(1) == 4 * one->bottleneck(torch::rand({1, 1, 16, 16})).size(1));
    auto early = small_config({"a", "b"}, {detect::FusionStage::early, detect::FusionOp::concatenate});
    SegNet e(early);
    CHECK(e->forward(torch::rand({1, 2, 16, 16})).size() == 2);
}

TEST_CASE("segmentation loss structure")
{
    const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);
    SUBCASE("exact agreement costs nothing")
    {
        auto labels = torch::tensor({0, 2, 1, 1}, torch::kInt64).view({1, 2, 2});
        auto probs = torch::zeros({1, 3, 2, 2}, f64).scatter_(1, labels.unsqueeze(1), 1.0);
        CHECK(segmentation_loss_from_probs(probs, labels, solar_class_weights()).item<double>() == 0.0);
    }
    SUBCASE("single weighted term")
    {
        auto probs = torch::tensor({0.5, 0.25, 0.25}, f64).view({1, 3, 1, 1});
        auto labels = torch::zeros({1, 1, 1}, torch::kInt64);
        CHECK(std::abs(segmentation_loss_from_probs(probs, labels, solar_class_weights()).item<double>() -
                       2 * std::log(2.0)) <= 1e-9);
        CHECK(solar_class_weights() == std::vector<double>{2, 1, 2});
    }
    SUBCASE("logit form equals probability form; linear in the weights")
    {
        std::mt19937_64 rng(5);
        for (int s = 0; s < 20; ++s) {
            torch::manual_seed(s);
            SegBatch batch{{torch::randn({2, 3, 4, 5}, f64), torch::randn({2, 3, 4, 5}, f64)},
                           {torch::randint(0, 3, {2, 4, 5}), torch::randint(0, 3, {2, 4, 5})}};
            const std::vector<double> w{1.5, 0.5, 3.0};
            const double l = segmentation_loss(batch, w).item<double>();
            const double direct = segmentation_loss_from_probs(torch::softmax(batch.logits[0], 1), batch.labels[0], w).item<double>() +
                                  segmentation_loss_from_probs(torch::softmax(batch.logits[1], 1), batch.labels[1], w).item<double>();
            CHECK(l == doctest::Approx(direct).epsilon(1e-12));
            CHECK(l >= 0);
            const double k = 0.5 + static_cast<double>(rng() % 7);
            const double lk = segmentation_loss(batch, {w[0] * k, w[1] * k, w[2] * k}).item<double>();
            CHECK(lk == doctest::Approx(k * l).epsilon(1e-12));
        }
    }
    SUBCASE("gradient w.r.t. logits matches central differences")
    {
        for (int s = 0; s < 20; ++s) {
            torch::manual_seed(100 + s);
            const auto logits = torch::randn({2, 3, 3, 3}, f64) * 2;
            const auto labels = torch::randint(0, 3, {2, 3, 3});
            auto f = [&](const torch::Tensor& z) { return segmentation_loss({{z}, {labels}}, solar_class_weights()); };
            CHECK(testing::max_relative_gradient_error(f, logits) <= 1e-4);
        }
    }
}

TEST_CASE("mirror-symmetric weights give mirror-equivariant outputs")
{
    torch::manual_seed(4);
    for (auto stage : {detect::FusionStage::late, detect::FusionStage::early}) {
        SegNet net(small_config({"a", "b"}, {stage, detect::FusionOp::concatenate}));
        {
            torch::NoGradGuard g;
            for (auto& p : net->parameters())
                if (p.dim() == 4) p.copy_((p + p.flip({3})) / 2);
        }
        torch::NoGradGuard g;
        const auto x = torch::rand({1, 2, 16, 16});
        const auto a = net->forward(x);
        const auto b = net->forward(x.flip({3}));
        for (std::size_t k = 0; k < a.size(); ++k) CHECK(torch::allclose(a[k].flip({3}), b[k], 1e-5, 1e-5));
    }
}

TEST_CASE("predict_masks")
{
    torch::manual_seed(6);
    auto cfg = small_config({"a", "b"});
    SegNet net(cfg);
    const auto s = toy_sample(cfg.bands, 16, 16, 9);

    SUBCASE("no detections leave background")
    {
        const auto m = predict_masks(s, {}, net);
        for (const auto& [band, mask] : m) CHECK(std::count(mask.labels.begin(), mask.labels.end(), 0) == 256);
        const auto m2 = predict_masks(s, {}, net, 1);
        CHECK(std::count(m2.at("a").labels.begin(), m2.at("a").labels.end(), 1) == 256);
    }
    SUBCASE("full-frame box equals argmax of the full-frame forward")
    {
        const auto m = predict_masks(s, {{"b", {{0, 0, 16, 16, 0, 0.8}}}}, net);
        std::map<std::string, core::Raster> patches{{"a", s.images.at("a")}, {"b", s.images.at("b")}};
        const auto probs = seg_forward(patches, net);
        const auto arg = probs.at("b").argmax(0).to(torch::kUInt8).contiguous();
        CHECK(std::equal(m.at("b").labels.begin(), m.at("b").labels.end(), arg.data_ptr<std::uint8_t>()));
        CHECK(std::count(m.at("a").labels.begin(), m.at("a").labels.end(), 0) == 256);
    }
    SUBCASE("higher score wins on overlap")
    {
        // Large random weights make the labels depend strongly on the crop.
        {
            torch::NoGradGuard g;
            for (auto& p : net->parameters()) p.copy_(torch::randn_like(p) * 0.6);
        }
        int total_disagreements = 0;
        const core::BoundingBox hi{2, 2, 9, 9, 0, 0.9};
        const core::BoundingBox lo{5, 4, 10, 11, 0, 0.6};
        const auto alone_hi = predict_masks(s, {{"a", {hi}}}, net, 0).at("a");
        const auto alone_lo = predict_masks(s, {{"a", {lo}}}, net, 0).at("a");
        for (const auto& order : {std::vector<core::BoundingBox>{hi, lo}, std::vector<core::BoundingBox>{lo, hi}}) {
            const auto both = predict_masks(s, {{"a", order}}, net, 0).at("a");
            int disagreements = 0;
            for (int y = 0; y < 16; ++y)
                for (int x = 0; x < 16; ++x) {
                    const bool in_hi = x >= hi.x && x < hi.right() && y >= hi.y && y < hi.bottom();
                    const bool in_lo = x >= lo.x && x < lo.right() && y >= lo.y && y < lo.bottom();
                    if (in_hi) CHECK(both.at(y, x) == alone_hi.at(y, x));
                    else if (in_lo) CHECK(both.at(y, x) == alone_lo.at(y, x));
                    else CHECK(both.at(y, x) == 0);
                    disagreements += in_hi && in_lo && alone_hi.at(y, x) != alone_lo.at(y, x);
                }
            total_disagreements += disagreements;
        }
        CHECK(total_disagreements > 0);
        const auto again = predict_masks(s, {{"a", {hi, lo}}}, net, 0).at("a");
        CHECK(again == predict_masks(s, {{"a", {hi, lo}}}, net, 0).at("a"));
    }
    SUBCASE("out of bounds box")
    {
        CHECK_THROWS_AS(predict_masks(s, {{"a", {{10, 10, 8, 8, 0, 0.5}}}}, net), core::DataError);
    }
}
