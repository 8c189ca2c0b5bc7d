#include "mlmt/cli/app.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mlmt/cli/config.hpp"
#include "mlmt/core/image_io.hpp"
#include "mlmt/core/manifest.hpp"
#include "mlmt/eval/metrics.hpp"
#include "mlmt/eval/report.hpp"
#include "mlmt/label/server.hpp"
#include "mlmt/synthetic/blobs.hpp"
#include "mlmt/synthetic/weak_labels.hpp"
#include "mlmt/train/train.hpp"

namespace mlmt::cli {

namespace fs = std::filesystem;
using core::DataError;

namespace {

constexpr const char* kResolvedConfig = "resolved_config.txt";

/// Relative dataset paths are taken from the data root when one is set.
fs::path data_path(const std::string& p)
{
    fs::path path(p);
    const char* root = std::getenv(kDataRootEnv);
    if (path.is_relative() && root && *root) return fs::path(root) / path;
    return path;
}

core::DatasetManifest load_data(Config& cfg, const std::string& key)
{
    const auto p = cfg.get_optional(key);
    if (!p) throw ConfigError(key, "a dataset is required");
    return core::load_manifest(data_path(*p));
}

fs::path output_dir(Config& cfg)
{
    const auto p = cfg.get_optional("out");
    if (!p) throw ConfigError("out", "an output directory is required (--out)");
    return *p;
}

void write_resolved(const Config& cfg, const fs::path& dir)
{
    fs::create_directories(dir);
    std::ofstream(dir / kResolvedConfig) << cfg.resolved_text();
}

template <class F>
auto config_value(const std::string& key, F&& f)
{
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(key, e.what());
    }
}

std::vector<std::pair<double, double>> parse_pairs(const std::string& key, const std::vector<std::string>& items)
{
    std::vector<std::pair<double, double>> out;
    for (const auto& item : items) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw ConfigError(key, "expected 'a:b' entries, got '" + item + "'");
        out.emplace_back(config_value(key, [&] { return std::stod(item.substr(0, colon)); }),
                         config_value(key, [&] { return std::stod(item.substr(colon + 1)); }));
    }
    return out;
}

std::vector<std::string> pair_text(const std::vector<std::pair<double, double>>& pairs)
{
    std::vector<std::string> out;
    for (const auto& [a, b] : pairs) out.push_back(core::format_real(a) + ":" + core::format_real(b));
    return out;
}

detect::FusionSpec fusion_of(Config& cfg, const std::string& prefix)
{
    detect::FusionSpec f;
    const auto stage = cfg.get_string(prefix + "fusion.stage", "late");
    const auto op = cfg.get_string(prefix + "fusion.op", "concat");
    f.stage = config_value(prefix + "fusion.stage", [&] { return detect::parse_fusion_stage(stage); });
    f.op = config_value(prefix + "fusion.op", [&] { return detect::parse_fusion_op(op); });
    return f;
}

std::vector<int> ints(const std::vector<long long>& v)
{
    return {v.begin(), v.end()};
}

detect::DetectorConfig detector_config(Config& cfg, const std::vector<std::string>& default_bands)
{
    detect::DetectorConfig d;
    d.bands = cfg.get_list("detect.bands", default_bands);
    d.input_channels = static_cast<int>(cfg.get_int("detect.input_channels", d.input_channels));
    d.branch_channels = ints(cfg.get_int_list("detect.branch_channels", {d.branch_channels.begin(), d.branch_channels.end()}));
    d.fusion = fusion_of(cfg, "detect.");
    const auto ratios = cfg.get_list("detect.anchors.ratios", pair_text(d.anchors.aspect_ratios));
    d.anchors.aspect_ratios = parse_pairs("detect.anchors.ratios", ratios);
    d.anchors.base_widths = cfg.get_double_list("detect.anchors.widths", d.anchors.base_widths);
    d.anchors.feature_stride = static_cast<int>(cfg.get_int("detect.anchors.stride", d.stride()));
    d.rpn_channels = static_cast<int>(cfg.get_int("detect.rpn.channels", d.rpn_channels));
    d.rpn_pos_iou = cfg.get_double("detect.rpn.positive_iou", d.rpn_pos_iou);
    d.rpn_neg_iou = cfg.get_double("detect.rpn.negative_iou", d.rpn_neg_iou);
    d.rpn_batch = static_cast<int>(cfg.get_int("detect.rpn.batch", d.rpn_batch));
    d.rpn_positive_fraction = cfg.get_double("detect.rpn.positive_fraction", d.rpn_positive_fraction);
    d.rpn_nms = cfg.get_double("detect.rpn.nms", d.rpn_nms);
    d.pre_nms_top_n = static_cast<int>(cfg.get_int("detect.rpn.pre_nms_top_n", d.pre_nms_top_n));
    d.post_nms_top_n_train = static_cast<int>(cfg.get_int("detect.rpn.post_nms_top_n_train", d.post_nms_top_n_train));
    d.post_nms_top_n_test = static_cast<int>(cfg.get_int("detect.rpn.post_nms_top_n_test", d.post_nms_top_n_test));
    d.min_proposal_size = cfg.get_double("detect.rpn.min_size", d.min_proposal_size);
    d.roi_size = static_cast<int>(cfg.get_int("detect.head.roi_size", d.roi_size));
    d.head_hidden = static_cast<int>(cfg.get_int("detect.head.hidden", d.head_hidden));
    d.roi_batch = static_cast<int>(cfg.get_int("detect.head.batch", d.roi_batch));
    d.roi_positive_fraction = cfg.get_double("detect.head.positive_fraction", d.roi_positive_fraction);
    d.roi_fg_iou = cfg.get_double("detect.head.foreground_iou", d.roi_fg_iou);
    d.final_nms = cfg.get_double("detect.nms", d.final_nms);
    d.score_threshold = cfg.get_double("detect.score_threshold", d.score_threshold);
    d.lambda = cfg.get_double("detect.lambda", d.lambda);
    d.head_lambda = cfg.get_double("detect.head.lambda", d.head_lambda);
    config_value("detect", [&] {
        d.validate();
        return 0;
    });
    return d;
}

segment::SegModelConfig segmenter_config(Config& cfg, const std::vector<std::string>& default_bands,
                                         const std::vector<std::string>& default_classes)
{
    segment::SegModelConfig s;
    s.bands = cfg.get_list("segment.bands", default_bands);
    s.class_set = cfg.get_list("segment.classes", default_classes);
    s.input_channels = static_cast<int>(cfg.get_int("segment.input_channels", s.input_channels));
    s.depth = static_cast<int>(cfg.get_int("segment.depth", s.depth));
    s.base_channels = static_cast<int>(cfg.get_int("segment.base_channels", s.base_channels));
    s.fusion = fusion_of(cfg, "segment.");
    s.class_weights = cfg.get_double_list("segment.class_weights", {});
    s.patch_size = static_cast<int>(cfg.get_int("segment.patch_size", s.patch_size));
    config_value("segment", [&] {
        s.validate();
        return 0;
    });
    return s;
}

train::TrainConfig train_config(Config& cfg, train::Task task)
{
    train::TrainConfig t;
    t.task = task;
    t.seed = cfg.get_uint("seed", 0);
    t.workers = static_cast<int>(cfg.get_int("workers", 1));
    t.epochs = static_cast<int>(cfg.get_int("train.epochs", t.resolved_epochs()));
    t.learning_rate = cfg.get_double("train.learning_rate", t.resolved_learning_rate());
    t.adam_beta1 = cfg.get_double("train.adam.beta1", t.adam_beta1);
    t.adam_beta2 = cfg.get_double("train.adam.beta2", t.adam_beta2);
    t.adam_eps = cfg.get_double("train.adam.eps", t.adam_eps);
    t.batch_size = static_cast<int>(cfg.get_int("train.batch_size", t.batch_size));
    t.validation_fraction = cfg.get_double("train.validation_fraction", t.validation_fraction);
    t.augment.north_south = cfg.get_bool("train.augment.north_south", false);
    t.augment.east_west = cfg.get_bool("train.augment.east_west", false);
    t.augment.both = cfg.get_bool("train.augment.both", false);
    t.verbose = cfg.get_bool("verbose", false);
    config_value("train", [&] {
        t.validate();
        return 0;
    });
    return t;
}

std::optional<core::DatasetManifest> optional_data(Config& cfg, const std::string& key)
{
    const auto p = cfg.get_optional(key);
    if (!p) return std::nullopt;
    return core::load_manifest(data_path(*p));
}

// ---------------------------------------------------------------- commands

void cmd_build_synthetic(Config& cfg, std::ostream& out)
{
    const auto dir = output_dir(cfg);
    synthetic::BlobSceneConfig scene;
    scene.seed = cfg.get_uint("seed", 0);
    const auto n = cfg.get_int("synth.samples", 40);
    const auto n_bands = cfg.get_int("synth.bands", 4);
    if (n < 1) throw ConfigError("synth.samples", "must be at least 1");
    if (n_bands < 1) throw ConfigError("synth.bands", "must be at least 1");
    std::vector<std::string> default_names;
    for (long long k = 0; k < n_bands; ++k) default_names.push_back("band" + std::to_string(k));
    synthetic::SliceGapConfig gap;
    gap.band_order = cfg.get_list("synth.band_names", default_names);
    if (static_cast<long long>(gap.band_order.size()) != n_bands)
        throw ConfigError("synth.band_names", "needs one name per band");
    gap.gap = static_cast<int>(cfg.get_int("synth.gap", 1));
    scene.height = static_cast<int>(cfg.get_int("synth.height", scene.height));
    scene.width = static_cast<int>(cfg.get_int("synth.width", scene.width));
    scene.min_blobs = static_cast<int>(cfg.get_int("synth.min_blobs", scene.min_blobs));
    scene.max_blobs = static_cast<int>(cfg.get_int("synth.max_blobs", scene.max_blobs));
    scene.min_radius = cfg.get_double("synth.min_radius", scene.min_radius);
    scene.max_radius = cfg.get_double("synth.max_radius", scene.max_radius);
    scene.core_fraction = cfg.get_double("synth.core_fraction", scene.core_fraction);
    scene.falloff = cfg.get_double("synth.falloff", scene.falloff);
    scene.noise_sigma = cfg.get_double("synth.noise_sigma", scene.noise_sigma);
    const auto span = static_cast<int>((n_bands - 1) * gap.gap);
    scene.depth = static_cast<int>(
        cfg.get_int("synth.depth", std::max(scene.depth, span + 1 + 2 * static_cast<int>(std::ceil(scene.max_radius / 2)))));
    gap.z0 = static_cast<int>(cfg.get_int("synth.z0", (scene.depth - 1 - span) / 2));
    scene.class_contrast.clear();
    for (const auto& [shell, core] : parse_pairs("synth.contrast", cfg.get_list("synth.contrast", {"0.6:0.9"})))
        scene.class_contrast.push_back({shell, core});
    scene.attenuation = cfg.get_double_list("synth.attenuation", scene.attenuation);
    config_value("synth", [&] {
        scene.validate();
        gap.validate(scene.depth);
        return 0;
    });
    cfg.check_unused();

    const auto m = synthetic::synthesize_blob_dataset(scene, static_cast<std::size_t>(n), gap, dir);
    write_resolved(cfg, dir);
    out << "wrote " << m.samples.size() << " samples, bands";
    for (const auto& b : m.bands) out << ' ' << b.name << "@z" << b.layer_index;
    out << " -> " << (dir / core::kManifestFileName).string() << "\n";
}

void cmd_gen_weak_labels(Config& cfg, std::ostream& out)
{
    const auto dir = output_dir(cfg);
    const auto input = load_data(cfg, "data");
    const auto method = cfg.get_string("weak.method", "percentile");
    synthetic::WeakLabelConfig weak;
    int erosion = 0;
    if (method == "percentile") {
        weak.intensity_percentile = cfg.get_double("weak.percentile", weak.intensity_percentile);
        weak.morph_open_radius = static_cast<int>(cfg.get_int("weak.open_radius", weak.morph_open_radius));
        weak.morph_close_radius = static_cast<int>(cfg.get_int("weak.close_radius", weak.morph_close_radius));
        weak.min_component_area = static_cast<int>(cfg.get_int("weak.min_area", weak.min_component_area));
        config_value("weak", [&] {
            weak.validate();
            return 0;
        });
    } else if (method == "erode") {
        erosion = static_cast<int>(cfg.get_int("weak.erosion_radius", 1));
        if (erosion < 0) throw ConfigError("weak.erosion_radius", "must be non-negative");
    } else {
        throw ConfigError("weak.method", "expected 'percentile' or 'erode', got '" + method + "'");
    }
    cfg.check_unused();

    std::vector<core::MultiLayerSample> samples;
    std::vector<std::string> classes = input.classes;
    for (std::size_t i = 0; i < input.samples.size(); ++i) {
        auto s = core::load_sample(input, i);
        for (const auto& b : s.bands) {
            if (method == "percentile") {
                s.masks[b.name] = synthetic::make_weak_seg_labels(s.images.at(b.name), weak);
            } else {
                auto it = s.masks.find(b.name);
                if (it == s.masks.end()) throw DataError("erosion needs ground-truth masks", s.sample_id, b.name);
                it->second = synthetic::weaken_gt_masks(it->second, erosion);
            }
        }
        if (method == "percentile" && !s.bands.empty()) classes = s.masks.begin()->second.class_set;
        samples.push_back(std::move(s));
    }
    const auto m = core::write_dataset(samples, input.bands, classes, dir, input.split);
    write_resolved(cfg, dir);
    out << "wrote weak labels for " << m.samples.size() << " samples -> " << (dir / core::kManifestFileName).string()
        << "\n";
}

void cmd_train_detect(Config& cfg, std::ostream& out)
{
    const auto dir = output_dir(cfg);
    const auto train_set = load_data(cfg, "data.train");
    const auto val_set = optional_data(cfg, "data.val");
    auto tc = train_config(cfg, train::Task::detect);
    tc.moo_warmup_epochs = static_cast<int>(cfg.get_int("train.moo_warmup_epochs", 0));
    config_value("train", [&] {
        tc.validate();
        return 0;
    });
    const auto model = detector_config(cfg, train_set.band_names());
    cfg.check_unused();
    tc.checkpoint_dir = dir / "checkpoints";
    write_resolved(cfg, dir);

    const auto result = train::train_detection(tc, model, train_set, val_set ? &*val_set : nullptr);
    std::ofstream hist(dir / "history.csv");
    hist << "epoch,train_rpn,train_head,val_rpn,val_head\n";
    auto opt = [](const std::optional<double>& v) { return v ? core::format_real(*v) : std::string(); };
    for (const auto& e : result.history)
        hist << e.epoch << ',' << core::format_real(e.train_rpn) << ',' << core::format_real(e.train_head) << ','
             << opt(e.val_rpn) << ',' << opt(e.val_head) << '\n';
    for (detect::Stage s : detect::kStages)
        out << detect::to_string(s) << ": best loss " << result.checkpoints[s].best_loss << " at epoch "
            << result.checkpoints[s].epoch << "\n";
}

void write_seg_history(const std::vector<train::SegEpoch>& history, const fs::path& path)
{
    std::ofstream hist(path);
    hist << "epoch,train_loss,val_loss,best_val_loss\n";
    for (const auto& e : history)
        hist << e.epoch << ',' << core::format_real(e.train_loss) << ',' << core::format_real(e.val_loss) << ','
             << core::format_real(e.best_val_loss) << '\n';
}

void cmd_train_segment(Config& cfg, std::ostream& out)
{
    const auto dir = output_dir(cfg);
    const auto train_set = load_data(cfg, "data.train");
    const auto val_set = optional_data(cfg, "data.val");
    auto tc = train_config(cfg, train::Task::segment);
    const auto model = segmenter_config(cfg, train_set.band_names(), train_set.classes);
    cfg.check_unused();
    tc.checkpoint_dir = dir;
    write_resolved(cfg, dir);

    const auto result = train::train_segmentation(tc, model, train_set, val_set ? &*val_set : nullptr);
    write_seg_history(result.history, dir / "history.csv");
    out << "best validation loss " << result.best_val_loss << " at epoch " << result.best_epoch << "\n";
}

/// Mean over bands of the mean class IoU, segmenting at the reference boxes.
double reference_mean_iou(segment::SegNet& model, const std::vector<core::MultiLayerSample>& samples)
{
    const auto& bands = model->config().bands;
    std::map<std::string, eval::IouTally> tallies;
    for (const auto& b : bands) tallies.emplace(b, eval::IouTally(model->config().class_set.size()));
    for (const auto& s : samples) {
        const auto masks = segment::predict_masks(s, s.detections, model);
        for (const auto& b : bands) {
            auto gt = s.masks.at(b);
            gt.class_set = model->config().class_set;
            tallies.at(b).add(masks.at(b), gt);
        }
    }
    double sum = 0;
    for (const auto& [b, t] : tallies) sum += t.scores().mean;
    return bands.empty() ? 0.0 : sum / static_cast<double>(bands.size());
}

void cmd_train_recursive(Config& cfg, std::ostream& out)
{
    const auto dir = output_dir(cfg);
    const auto train_set = load_data(cfg, "data.train");
    const auto val_set = optional_data(cfg, "data.val");
    const auto reference = optional_data(cfg, "data.reference");
    auto tc = train_config(cfg, train::Task::segment);
    tc.max_recursion_rounds = static_cast<int>(cfg.get_int("train.max_rounds", tc.max_recursion_rounds));
    tc.recursion_tolerance = cfg.get_double("train.recursion_tolerance", tc.recursion_tolerance);
    const auto model = segmenter_config(cfg, train_set.band_names(), train_set.classes);
    config_value("train", [&] {
        tc.validate();
        return 0;
    });
    cfg.check_unused();
    tc.checkpoint_dir = dir;
    write_resolved(cfg, dir);

    train::RoundMetric metric;
    std::vector<core::MultiLayerSample> ref_samples;
    if (reference) {
        ref_samples = core::load_all_samples(*reference);
        metric = [&](segment::SegNet& m) { return std::optional<double>(reference_mean_iou(m, ref_samples)); };
    }
    const auto result = train::recursive_train(tc, model, train_set, val_set ? &*val_set : nullptr, metric);
    for (const auto& r : result.rounds) {
        out << "round " << r.round << ": val loss " << r.val_loss;
        if (r.metric) out << ", reference mean IoU " << *r.metric;
        out << "\n";
    }
    out << "selected round " << result.best_round << "\n";
}

void cmd_predict(Config& cfg, std::ostream& out)
{
    const auto dir = output_dir(cfg);
    const auto input = load_data(cfg, "data");
    const auto det_dir = cfg.get_optional("model.detector");
    const auto seg_dir = cfg.get_optional("model.segmenter");
    if (!det_dir && !seg_dir) throw ConfigError("model.detector", "give a detector, a segmenter, or both");
    const auto torch_threads = cfg.get_int("workers", 1);
    cfg.get_uint("seed", 0);
    cfg.check_unused();
    torch::set_num_threads(static_cast<int>(torch_threads));

    std::optional<detect::Detector> detector;
    if (det_dir) {
        auto saved = Config::load(fs::path(*det_dir) / kResolvedConfig);
        detector.emplace(detector_config(saved, input.band_names()));
        detect::assemble_best(*detector, detect::load_checkpoints(fs::path(*det_dir) / "checkpoints"));
        (*detector)->eval();
    }
    std::optional<segment::SegNet> segmenter;
    if (seg_dir) {
        auto saved = Config::load(fs::path(*seg_dir) / kResolvedConfig);
        segmenter.emplace(segmenter_config(saved, input.band_names(), input.classes));
        core::load_module_state(**segmenter, core::load_named_tensors(fs::path(*seg_dir) / "weights.bin"));
        (*segmenter)->eval();
    }
    write_resolved(cfg, dir);

    std::vector<core::MultiLayerSample> results;
    for (std::size_t i = 0; i < input.samples.size(); ++i) {
        auto s = core::load_sample(input, i);
        if (detector) s.detections = detect::detect_forward(s, *detector, detect::RunMode::test);
        s.masks.clear();
        if (segmenter) s.masks = segment::predict_masks(s, s.detections, *segmenter);
        results.push_back(std::move(s));
    }
    const auto classes = segmenter ? (*segmenter)->config().class_set : input.classes;
    const auto m = core::write_dataset(results, input.bands, classes, dir, input.split);
    for (const auto& rec : m.samples) {
        for (const auto& [band, files] : rec.bands) {
            if (!files.mask) continue;
            auto sidecar = m.resolve(*files.mask);
            sidecar.replace_extension(".json");
            nlohmann::ordered_json meta{{"sample_id", rec.id},
                                        {"band", band},
                                        {"classes", classes},
                                        {"boxes_from", detector ? "detector" : "input"},
                                        {"segmenter", *seg_dir}};
            std::ofstream(sidecar) << meta.dump(2) << "\n";
        }
    }
    out << "wrote predictions for " << m.samples.size() << " samples -> "
        << (dir / core::kManifestFileName).string() << "\n";
}

void cmd_evaluate(Config& cfg, std::ostream& out)
{
    const auto pred_path = cfg.get_optional("eval.pred");
    if (!pred_path) throw ConfigError("eval.pred", "predictions are required (--pred)");
    const auto pred = core::load_manifest(data_path(*pred_path));
    const auto gt = load_data(cfg, "eval.gt");
    const auto task = cfg.get_string("eval.task", "detect");
    const auto dir = fs::path(cfg.get_string("out", pred.root.string()));
    eval::EvalReport report;
    if (task == "detect") {
        const auto min_score = cfg.get_double("eval.min_score", 0.0);
        cfg.check_unused();
        report = eval::evaluate_detection(pred, gt, min_score);
    } else if (task == "segment") {
        cfg.check_unused();
        report = eval::evaluate_segmentation(pred, gt);
    } else {
        throw ConfigError("eval.task", "expected 'detect' or 'segment', got '" + task + "'");
    }
    eval::write_report(report, dir);
    write_resolved(cfg, dir);
    out << eval::report_csv(report);
}

void cmd_agreement(Config& cfg, std::ostream& out)
{
    const auto a = load_data(cfg, "eval.a");
    const auto b = load_data(cfg, "eval.b");
    const auto cls = cfg.get_string("eval.class", "1");
    int class_id = -1;
    for (std::size_t c = 0; c < a.classes.size(); ++c)
        if (a.classes[c] == cls) class_id = static_cast<int>(c);
    if (class_id < 0) {
        class_id = config_value("eval.class", [&] {
            std::size_t used = 0;
            const int v = std::stoi(cls, &used);
            if (used != cls.size() || v < 0 || v >= static_cast<int>(a.classes.size()))
                throw std::invalid_argument("not a class name or index: '" + cls + "'");
            return v;
        });
    }
    const auto dir = fs::path(cfg.get_string("out", a.root.string()));
    cfg.check_unused();
    const auto report = eval::evaluate_agreement(a, b, class_id);
    eval::write_report(report, dir);
    write_resolved(cfg, dir);
    out << eval::report_csv(report);
}

void cmd_serve(Config& cfg, std::ostream& out)
{
    const auto data = load_data(cfg, "data");
    const auto dir = fs::path(cfg.get_string("out", "label_store"));
    const auto host = cfg.get_string("serve.host", "127.0.0.1");
    const auto port = cfg.get_int("serve.port", 8080);
    if (port < 1 || port > 65535) throw ConfigError("serve.port", "must be in 1..65535");
    label::BandLinks links;
    for (const auto& [a, b] : [&] {
             std::vector<std::pair<std::string, std::string>> v;
             for (const auto& item : cfg.get_list("serve.links", {})) {
                 const auto colon = item.find(':');
                 if (colon == std::string::npos) throw ConfigError("serve.links", "expected 'band:band' entries");
                 v.emplace_back(item.substr(0, colon), item.substr(colon + 1));
             }
             return v;
         }())
        links.emplace_back(a, b);
    cfg.check_unused();
    write_resolved(cfg, dir);
    label::AnnotationStore store(data, dir / "logs", links);
    out << "serving " << store.sample_ids().size() << " samples on http://" << host << ":" << port << "\n";
    out.flush();
    label::serve(store, dir / "exports", host, static_cast<int>(port));
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Multi-layer multi-task detection and segmentation toolkit", "mlmt"};
    app.require_subcommand(1);

    struct Common {
        std::optional<std::string> config;
        std::vector<std::string> overrides;
        std::optional<std::string> seed;
        std::optional<std::string> workers;
        std::optional<std::string> out;
        bool verbose = false;
    };
    Common common;
    std::map<std::string, std::optional<std::string>> flags;  // config key -> flag value

    auto add_common = [&](CLI::App* sub, bool config_required) {
        auto* c = sub->add_option("--config", common.config, "key=value config file");
        if (config_required) c->required();
        sub->add_option("--set", common.overrides, "override one config key (key=value), repeatable");
        sub->add_option("--seed", common.seed, "random seed");
        sub->add_option("--workers", common.workers, "CPU threads");
        sub->add_option("--out", common.out, "output directory");
        sub->add_flag("-v,--verbose", common.verbose, "progress on stderr");
    };
    auto add_flag = [&](CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
        sub->add_option(name, flags[key], help + " [" + key + "]");
    };

    using Handler = void (*)(Config&, std::ostream&);
    std::vector<std::pair<CLI::App*, Handler>> commands;

    auto* build = app.add_subcommand("build-synthetic", "synthesize a multi-layer blob dataset");
    add_common(build, false);
    add_flag(build, "--samples", "synth.samples", "number of samples");
    add_flag(build, "--bands", "synth.bands", "number of bands");
    add_flag(build, "--gap", "synth.gap", "slice gap between consecutive bands");
    add_flag(build, "--z0", "synth.z0", "slice index of the first band");
    commands.emplace_back(build, cmd_build_synthetic);

    auto* weak = app.add_subcommand("gen-weak-labels", "replace masks with weak labels");
    add_common(weak, false);
    add_flag(weak, "--data", "data", "input dataset");
    add_flag(weak, "--method", "weak.method", "percentile or erode");
    add_flag(weak, "--erosion-radius", "weak.erosion_radius", "erosion radius for the erode method");
    commands.emplace_back(weak, cmd_gen_weak_labels);

    for (const auto& [name, help, handler] :
         std::vector<std::tuple<std::string, std::string, Handler>>{
             {"train-detect", "train the multi-band detector", cmd_train_detect},
             {"train-segment", "train the multi-band segmenter", cmd_train_segment},
             {"train-recursive", "recursive training on weak labels", cmd_train_recursive}}) {
        auto* sub = app.add_subcommand(name, help);
        add_common(sub, true);
        add_flag(sub, "--train", "data.train", "training dataset");
        add_flag(sub, "--val", "data.val", "validation dataset");
        if (name == "train-recursive") add_flag(sub, "--reference", "data.reference", "dataset with reference masks");
        commands.emplace_back(sub, handler);
    }

    auto* predict = app.add_subcommand("predict", "run trained models over a dataset");
    add_common(predict, false);
    add_flag(predict, "--data", "data", "input dataset");
    add_flag(predict, "--detector", "model.detector", "train-detect output directory");
    add_flag(predict, "--segmenter", "model.segmenter", "train-segment or train-recursive output directory");
    commands.emplace_back(predict, cmd_predict);

    auto* evaluate = app.add_subcommand("evaluate", "score predictions against ground truth");
    add_common(evaluate, false);
    add_flag(evaluate, "--pred", "eval.pred", "prediction dataset");
    add_flag(evaluate, "--gt", "eval.gt", "ground-truth dataset");
    add_flag(evaluate, "--task", "eval.task", "detect or segment");
    add_flag(evaluate, "--min-score", "eval.min_score", "drop predictions scored below this");
    commands.emplace_back(evaluate, cmd_evaluate);

    auto* agree = app.add_subcommand("agreement", "IoU between two methods' masks for one class");
    add_common(agree, false);
    add_flag(agree, "--a", "eval.a", "first dataset");
    add_flag(agree, "--b", "eval.b", "second dataset");
    add_flag(agree, "--class", "eval.class", "class name or index");
    commands.emplace_back(agree, cmd_agreement);

    auto* serve = app.add_subcommand("serve", "annotation HTTP service");
    add_common(serve, false);
    add_flag(serve, "--data", "data", "dataset to annotate");
    add_flag(serve, "--host", "serve.host", "bind address");
    add_flag(serve, "--port", "serve.port", "port");
    add_flag(serve, "--link", "serve.links", "comma-separated band:band pairs sharing boxes");
    commands.emplace_back(serve, cmd_serve);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        const auto* failing = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << failing->help();
        return kExitUsage;
    }

    try {
        Config cfg = common.config ? Config::load(*common.config) : Config{};
        for (const auto& o : common.overrides) cfg.apply_override(o);
        for (const auto& [key, value] : flags)
            if (value) cfg.set(key, *value);
        if (common.seed) cfg.set("seed", *common.seed);
        if (common.workers) cfg.set("workers", *common.workers);
        if (common.out) cfg.set("out", *common.out);
        if (common.verbose) cfg.set("verbose", "true");
        const auto workers = cfg.get_int("workers", 1);
        if (workers < 1) throw ConfigError("workers", "must be at least 1");
        torch::set_num_threads(static_cast<int>(workers));
        cfg.get_bool("verbose", false);
        cfg.get_uint("seed", 0);
        for (const auto& [sub, handler] : commands)
            if (sub->parsed()) handler(cfg, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace mlmt::cli
