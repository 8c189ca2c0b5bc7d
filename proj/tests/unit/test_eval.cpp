#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include <json.hpp>

#include "mlmt/core/manifest.hpp"
#include "mlmt/eval/metrics.hpp"
#include "mlmt/eval/report.hpp"
#include "../common/oracles.hpp"
#include "../common/test_util.hpp"

using namespace mlmt;
using namespace mlmt::eval;
using core::BoundingBox;
using core::SegMask;

namespace {

std::vector<BoundingBox> random_boxes(std::mt19937& rng, int n, int frame, bool scored)
{
    std::vector<BoundingBox> out;
    std::uniform_int_distribution<int> side(1, frame / 2);
    for (int i = 0; i < n; ++i) {
        BoundingBox b;
        b.w = side(rng);
        b.h = side(rng);
        b.x = static_cast<int>(rng() % (frame - b.w + 1));
        b.y = static_cast<int>(rng() % (frame - b.h + 1));
        if (scored) b.score = (rng() % 1000) / 1000.0;
        out.push_back(b);
    }
    return out;
}

}  // namespace

TEST_CASE("eligibility: either-area form equals min-area form on all small boxes")
{
    // Every geometry up to 12x12 for the prediction against a fixed set of GT boxes.
    const std::vector<BoundingBox> gts{{3, 3, 4, 4, 0, {}}, {0, 0, 12, 12, 0, {}}, {5, 2, 1, 7, 0, {}}};
    long checked = 0;
    for (const auto& g : gts)
        for (int w = 1; w <= 12; ++w)
            for (int h = 1; h <= 12; ++h)
                for (int x = 0; x + w <= 12; ++x)
                    for (int y = 0; y + h <= 12; ++y) {
                        const BoundingBox p{x, y, w, h, 0, {}};
                        REQUIRE(match_eligible(p, g) == oracle::eligible_min_area(p, g));
                        ++checked;
                    }
    CHECK(checked > 10000);
}

TEST_CASE("matching examples")
{
    const BoundingBox g{10, 10, 20, 20, 0, {}};
    CHECK(match_detections({g}, {g}).tp() == 1);

    const BoundingBox tiny{15, 15, 3, 3, 0, 0.9};
    const BoundingBox huge{0, 0, 100, 100, 0, {}};
    CHECK(core::iou(tiny, huge) < 0.5);
    const auto m = match_detections({tiny}, {huge});
    CHECK(m.tp() == 1);
    CHECK(m.fp() == 0);
    CHECK(m.fn() == 0);

    // Two predictions on one GT: the higher score is the TP.
    const auto dup = match_detections({{10, 10, 20, 20, 0, 0.4}, {11, 10, 20, 20, 0, 0.8}}, {g});
    REQUIRE(dup.matches.size() == 1);
    CHECK(dup.matches[0].first == 1);
    CHECK(dup.unmatched_predictions == std::vector<int>{0});
}

TEST_CASE("matching reaches the exhaustive maximum")
{
    std::mt19937 rng(12);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto preds = random_boxes(rng, static_cast<int>(rng() % 5), 16, true);
        const auto gts = random_boxes(rng, static_cast<int>(rng() % 5), 16, false);
        const auto m = match_detections(preds, gts);
        REQUIRE(m.tp() == oracle::max_matching_exhaustive(preds, gts));
        REQUIRE(m.tp() + m.fp() == static_cast<long>(preds.size()));
        REQUIRE(m.tp() + m.fn() == static_cast<long>(gts.size()));
        std::set<int> ps, gs;
        for (auto [p, g] : m.matches) {
            REQUIRE(ps.insert(p).second);
            REQUIRE(gs.insert(g).second);
            REQUIRE(match_eligible(preds[p], gts[g]));
        }
    }
}

TEST_CASE("precision recall F1")
{
    const auto t1 = prf1(Counts{82, 6, 18});
    CHECK(std::round(t1.precision * 100) / 100 == doctest::Approx(0.93));
    CHECK(std::round(t1.recall * 100) / 100 == doctest::Approx(0.82));
    CHECK(std::round(t1.f1 * 100) / 100 == doctest::Approx(0.87));

    const auto none = prf1(Counts{});
    CHECK(none.degenerate);
    CHECK(none.f1 == 0);
    const auto perfect = prf1(Counts{5, 0, 0});
    CHECK(perfect.precision == 1);
    CHECK(perfect.recall == 1);
    CHECK(perfect.f1 == 1);

    std::mt19937 rng(3);
    for (int i = 0; i < 500; ++i) {
        const Counts c{long(rng() % 20), long(rng() % 20), long(rng() % 20)};
        const auto s = prf1(c);
        if (s.precision > 0 && s.recall > 0) {
            CHECK(s.f1 >= std::min(s.precision, s.recall) - 1e-12);
            CHECK(s.f1 <= std::max(s.precision, s.recall) + 1e-12);
            CHECK(s.f1 == doctest::Approx(2 * s.precision * s.recall / (s.precision + s.recall)));
        } else {
            CHECK(s.f1 == 0);
        }
    }
}

TEST_CASE("iou scores")
{
    const std::vector<std::string> cls{"bg", "a", "b"};
    SegMask m(8, 8, cls);
    for (int i = 0; i < 64; ++i) m.labels[i] = i % 3;
    const auto same = iou_scores(m, m);
    for (const auto& v : same.per_class) CHECK(*v == 1.0);
    CHECK(same.mean == 1.0);

    SegMask p(4, 4, {"bg", "fg"}), g(4, 4, {"bg", "fg"});
    p.at(0, 0) = 1;
    g.at(3, 3) = 1;
    CHECK(*iou_scores(p, g).per_class[1] == 0.0);

    SegMask only_bg(4, 4, cls);
    const auto skipped = iou_scores(only_bg, only_bg);
    CHECK(skipped.skipped_classes == std::vector<int>{1, 2});
    CHECK(skipped.mean == 1.0);

    std::mt19937 rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        SegMask a(8, 8, cls), b(8, 8, cls);
        for (auto& l : a.labels) l = rng() % 3;
        for (auto& l : b.labels) l = rng() % 3;
        const auto s = iou_scores(a, b);
        const auto want = oracle::pixel_iou(a, b, 3);
        double sum = 0;
        int n = 0;
        for (int c = 0; c < 3; ++c) {
            if (want[c] < 0) {
                CHECK_FALSE(s.per_class[c].has_value());
                continue;
            }
            CHECK(*s.per_class[c] == doctest::Approx(want[c]).epsilon(1e-12));
            sum += want[c];
            ++n;
        }
        CHECK(s.mean == doctest::Approx(sum / n));
        const auto r = iou_scores(b, a);
        for (int c = 0; c < 3; ++c)
            if (s.per_class[c]) CHECK(*s.per_class[c] == *r.per_class[c]);
    }
    CHECK_THROWS_AS(iou_scores(SegMask(3, 3, cls), SegMask(3, 4, cls)), core::DataError);
    CHECK_THROWS_AS(iou_scores(SegMask(3, 3, cls), SegMask(3, 3, {"x", "y", "z"})), core::DataError);
}

TEST_CASE("agreement")
{
    SegMask a(4, 4, {"bg", "ar"}), b(4, 4, {"bg", "ar"});
    for (int i = 0; i < 8; ++i) a.labels[i] = 1;
    CHECK(*agreement(a, a, 1) == 1.0);
    for (int i = 8; i < 16; ++i) b.labels[i] = 1;
    CHECK(*agreement(a, b, 1) == 0.0);
    CHECK_FALSE(agreement(SegMask(4, 4, {"bg", "ar"}), SegMask(4, 4, {"bg", "ar"}), 1).has_value());
}

TEST_CASE("report layout follows the results tables")
{
    EvalReport r;
    r.task = "detect";
    r.detection.push_back({"3934A", {82, 6, 18}, prf1(Counts{82, 6, 18})});
    CHECK(report_csv(r) == "Band,Precision,Recall,F1\n3934A,0.93,0.82,0.87\n");
    const auto doc = nlohmann::json::parse(report_json(r));
    CHECK(doc["bands"][0]["tp"] == 82);

    EvalReport s;
    s.task = "segment";
    s.classes = {"AR", "QS", "OD"};
    s.segmentation.push_back({"171A", {{0.5, 0.9, std::nullopt}, 0.7, {2}}});
    CHECK(report_csv(s) == "Band,AR,QS,OD,Mean IoU\n171A,0.50,0.90,NA,0.70\n");

    EvalReport a;
    a.task = "agreement";
    a.agreement = {{"171A", 0.44}, {"195A", 0.46}};
    CHECK(report_csv(a) == "Band,Agreement IoU\n171A,0.44\n195A,0.46\n");
}

TEST_CASE("dataset evaluation pools counts per band")
{
    testing::TempDir dir;
    const std::vector<core::BandId> bands{{"a", 0}, {"b", 1}};
    auto make = [&](const std::string& sub, std::vector<BoundingBox> a_boxes, std::vector<BoundingBox> b_boxes) {
        core::MultiLayerSample s;
        s.sample_id = "s0";
        s.bands = bands;
        s.images["a"] = core::Raster(20, 20);
        s.images["b"] = core::Raster(20, 20);
        s.detections["a"] = std::move(a_boxes);
        s.detections["b"] = std::move(b_boxes);
        SegMask m(20, 20, {"bg", "fg"});
        for (int i = 0; i < 40; ++i) m.labels[i] = 1;
        s.masks["a"] = m;
        s.masks["b"] = m;
        return core::write_dataset({s}, bands, {"bg", "fg"}, dir / sub);
    };
    const auto gt = make("gt", {{0, 0, 5, 5, 0, {}}}, {{0, 0, 5, 5, 0, {}}, {10, 10, 5, 5, 0, {}}});
    const auto pred = make("pred", {{0, 0, 5, 5, 0, 0.9}, {12, 0, 5, 5, 0, 0.2}}, {{1, 1, 4, 4, 0, 0.8}});
    const auto r = evaluate_detection(pred, gt, 0.5);
    REQUIRE(r.detection.size() == 2);
    CHECK(r.detection[0].counts.tp == 1);
    CHECK(r.detection[0].counts.fp == 0);
    CHECK(r.detection[1].counts.fn == 1);
    const auto seg = evaluate_segmentation(pred, gt);
    CHECK(seg.segmentation[0].scores.mean == 1.0);
    const auto agr = evaluate_agreement(pred, gt, 1);
    CHECK(*agr.agreement[1].iou == 1.0);
    write_report(r, dir / "rep");
    CHECK(std::filesystem::exists(dir / "rep/report.json"));
    CHECK(std::filesystem::exists(dir / "rep/report.csv"));
}
