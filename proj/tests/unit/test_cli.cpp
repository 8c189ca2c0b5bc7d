#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include <json.hpp>

#include "mlmt/cli/app.hpp"
#include "mlmt/cli/config.hpp"
#include "mlmt/core/manifest.hpp"
#include "../common/test_util.hpp"

using namespace mlmt;
using mlmt::testing::slurp;
using mlmt::testing::TempDir;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome run(std::vector<std::string> args)
{
    args.insert(args.begin(), "mlmt");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out;
    std::ostringstream err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

void write_file(const std::filesystem::path& p, const std::string& text)
{
    std::ofstream(p) << text;
}

}  // namespace

TEST_CASE("config files, overrides and typed reads")
{
    auto cfg = cli::Config::parse("# comment\na.b = 3\nlist = 1, 2,3\nflag=yes\nname = x # trailing\n");
    cfg.apply_override("a.b=4");
    CHECK(cfg.get_int("a.b", 0) == 4);
    CHECK(cfg.get_int_list("list", {}) == std::vector<long long>{1, 2, 3});
    CHECK(cfg.get_bool("flag", false));
    CHECK(cfg.get_string("name", "") == "x");
    CHECK(cfg.get_double("missing", 0.25) == 0.25);
    CHECK_NOTHROW(cfg.check_unused());
    CHECK(cfg.resolved_text() == "a.b = 4\nflag = true\nlist = 1,2,3\nmissing = 0.25\nname = x\n");

    auto bad = cli::Config::parse("train.epochs = ten\nextra.key = 1\n");
    try {
        bad.get_int("train.epochs", 1);
        FAIL("expected a config error");
    } catch (const cli::ConfigError& e) {
        CHECK(e.key() == "train.epochs");
        CHECK(std::string(e.what()).find("train.epochs") == 0);
    }
    CHECK_THROWS_AS(bad.check_unused(), cli::ConfigError);
    CHECK_THROWS_AS(cli::Config::parse("no equals sign\n"), cli::ConfigError);
    CHECK_THROWS_AS(cli::Config::parse("Bad.Key = 1\n"), cli::ConfigError);
}

TEST_CASE("usage errors exit with 2")
{
    TempDir dir;
    const auto none = run({"train-detect", "--train", (dir / "d").string()});
    CHECK(none.code == cli::kExitUsage);
    CHECK(none.err.find("--config") != std::string::npos);
    CHECK(none.err.find("Usage") != std::string::npos);
    CHECK(run({}).code == cli::kExitUsage);
    CHECK(run({"build-synthetic", "--frobnicate"}).code == cli::kExitUsage);

    const auto bad = run({"build-synthetic", "--out", (dir / "x").string(), "--set", "synth.gap=two"});
    CHECK(bad.code == cli::kExitUsage);
    CHECK(bad.err.find("synth.gap") != std::string::npos);
    const auto unknown = run({"build-synthetic", "--out", (dir / "x").string(), "--set", "synth.colour=red"});
    CHECK(unknown.code == cli::kExitUsage);
    CHECK(unknown.err.find("synth.colour") != std::string::npos);
    CHECK(run({"--help"}).code == cli::kExitOk);
}

TEST_CASE("runtime failures exit with 1")
{
    TempDir dir;
    const auto r = run({"evaluate", "--pred", (dir / "nothing").string(), "--gt", (dir / "nothing").string()});
    CHECK(r.code == cli::kExitRuntime);
    CHECK(!r.err.empty());
}

TEST_CASE("build-synthetic passes gap and band count through")
{
    TempDir dir;
    const auto r = run({"build-synthetic", "--gap", "2", "--bands", "4", "--samples", "3", "--out", (dir / "d").string()});
    REQUIRE(r.code == cli::kExitOk);
    const auto m = core::load_manifest(dir / "d");
    REQUIRE(m.bands.size() == 4);
    for (std::size_t k = 1; k < 4; ++k) CHECK(m.bands[k].layer_index - m.bands[k - 1].layer_index == 2);
    CHECK(m.samples.size() == 3);
    CHECK(std::filesystem::exists(dir / "d" / "resolved_config.txt"));

    SUBCASE("same seed, same bytes; resolved config reproduces the run")
    {
        REQUIRE(run({"build-synthetic", "--gap", "2", "--bands", "4", "--samples", "3", "--out", (dir / "e").string()}).code == 0);
        CHECK(slurp(dir / "d" / "dataset.json") == slurp(dir / "e" / "dataset.json"));
        CHECK(slurp(dir / "d" / "blob_00002" / "band3.png") == slurp(dir / "e" / "blob_00002" / "band3.png"));
        REQUIRE(run({"build-synthetic", "--config", (dir / "d" / "resolved_config.txt").string(), "--out",
                     (dir / "f").string()})
                    .code == 0);
        CHECK(slurp(dir / "d" / "blob_00001" / "band0.png") == slurp(dir / "f" / "blob_00001" / "band0.png"));
    }
}

TEST_CASE("evaluate writes byte-stable reports")
{
    TempDir dir;
    REQUIRE(run({"build-synthetic", "--bands", "2", "--samples", "3", "--out", (dir / "d").string()}).code == 0);
    const auto r = run({"evaluate", "--pred", (dir / "d").string(), "--gt", (dir / "d").string(), "--task", "detect"});
    REQUIRE(r.code == cli::kExitOk);
    const auto report = nlohmann::json::parse(slurp(dir / "d" / "report.json"));
    CHECK(report["task"] == "detect");
    CHECK(report["bands"][0]["f1"] == 1.0);
    CHECK(slurp(dir / "d" / "report.csv") == "Band,Precision,Recall,F1\nband0,1.00,1.00,1.00\nband1,1.00,1.00,1.00\n");
    const auto first = slurp(dir / "d" / "report.json");
    REQUIRE(run({"evaluate", "--config", (dir / "d" / "resolved_config.txt").string()}).code == 0);
    CHECK(slurp(dir / "d" / "report.json") == first);

    const auto seg = run({"evaluate", "--pred", (dir / "d").string(), "--gt", (dir / "d").string(), "--task", "segment",
                          "--out", (dir / "s").string()});
    REQUIRE(seg.code == 0);
    CHECK(slurp(dir / "s" / "report.csv").rfind("Band,background,shell,core,Mean IoU\n", 0) == 0);
    CHECK(run({"evaluate", "--pred", (dir / "d").string(), "--gt", (dir / "d").string(), "--task", "count"}).code == 2);
}

TEST_CASE("relative dataset paths resolve against the data root")
{
    TempDir dir;
    REQUIRE(run({"build-synthetic", "--bands", "2", "--samples", "2", "--out", (dir / "d").string()}).code == 0);
    ::setenv(cli::kDataRootEnv, dir.path().c_str(), 1);
    const auto r = run({"agreement", "--a", "d", "--b", "d", "--class", "shell", "--out", (dir / "ag").string()});
    ::unsetenv(cli::kDataRootEnv);
    REQUIRE(r.code == 0);
    CHECK(slurp(dir / "ag" / "report.csv") == "Band,Agreement IoU\nband0,1.00\nband1,1.00\n");
}

TEST_CASE("training and prediction through the tool are deterministic")
{
    TempDir dir;
    REQUIRE(run({"build-synthetic", "--bands", "2", "--samples", "4", "--out", (dir / "d").string(), "--set",
                 "synth.height=32", "--set", "synth.width=32", "--set", "synth.min_radius=4", "--set",
                 "synth.max_radius=7"})
                .code == 0);
    write_file(dir / "det.cfg", "train.epochs = 2\ntrain.learning_rate = 0.001\ndetect.score_threshold = 0\n");
    write_file(dir / "seg.cfg", "train.epochs = 2\nsegment.depth = 2\nsegment.base_channels = 4\nsegment.patch_size = 16\n");
    for (const char* tag : {"a", "b"}) {
        const std::string t = tag;
        REQUIRE(run({"train-detect", "--config", (dir / "det.cfg").string(), "--train", (dir / "d").string(), "--seed",
                     "7", "--out", (dir / ("det_" + t)).string()})
                    .code == 0);
        REQUIRE(run({"train-segment", "--config", (dir / "seg.cfg").string(), "--train", (dir / "d").string(), "--seed",
                     "7", "--out", (dir / ("seg_" + t)).string()})
                    .code == 0);
        REQUIRE(run({"predict", "--data", (dir / "d").string(), "--detector", (dir / ("det_" + t)).string(),
                     "--segmenter", (dir / ("seg_" + t)).string(), "--out", (dir / ("pred_" + t)).string()})
                    .code == 0);
    }
    CHECK(slurp(dir / "det_a" / "history.csv") == slurp(dir / "det_b" / "history.csv"));
    CHECK(slurp(dir / "seg_a" / "weights.bin") == slurp(dir / "seg_b" / "weights.bin"));
    CHECK(slurp(dir / "pred_a" / "blob_00000" / "band1.boxes.csv") == slurp(dir / "pred_b" / "blob_00000" / "band1.boxes.csv"));
    CHECK(std::filesystem::exists(dir / "det_a" / "checkpoints" / "rpn" / "weights.bin"));

    const auto pred = core::load_manifest(dir / "pred_a");
    CHECK(pred.samples.size() == 4);
    const auto& files = pred.samples[0].bands.at("band0");
    REQUIRE(files.mask);
    auto sidecar = pred.resolve(*files.mask);
    sidecar.replace_extension(".json");
    const auto meta = nlohmann::json::parse(slurp(sidecar));
    CHECK(meta["classes"].size() == 3);
    CHECK(meta["boxes_from"] == "detector");
    for (const auto& s : core::load_all_samples(pred))
        for (const auto& [band, boxes] : s.detections)
            for (const auto& b : boxes) CHECK(b.score.has_value());
}
