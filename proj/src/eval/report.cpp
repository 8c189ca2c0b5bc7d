#include "mlmt/eval/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "mlmt/core/image_io.hpp"

namespace mlmt::eval {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using core::DataError;

namespace {

std::string fixed2(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

ojson optional_json(const std::optional<double>& v)
{
    return v ? ojson(*v) : ojson(nullptr);
}

std::vector<std::size_t> shared_samples(const core::DatasetManifest& a, const core::DatasetManifest& b,
                                        std::vector<std::size_t>& b_index)
{
    std::vector<std::size_t> a_index;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        for (std::size_t j = 0; j < b.samples.size(); ++j) {
            if (a.samples[i].id == b.samples[j].id) {
                a_index.push_back(i);
                b_index.push_back(j);
                break;
            }
        }
    }
    return a_index;
}

void check_bands(const core::DatasetManifest& a, const core::DatasetManifest& b)
{
    if (a.band_names() != b.band_names()) throw DataError("manifests declare different bands");
}

}  // namespace

std::string report_json(const EvalReport& r)
{
    ojson doc;
    doc["task"] = r.task;
    if (!r.classes.empty()) doc["classes"] = r.classes;
    doc["bands"] = ojson::array();
    for (const auto& d : r.detection) {
        doc["bands"].push_back({{"band", d.band},
                                {"precision", d.scores.precision},
                                {"recall", d.scores.recall},
                                {"f1", d.scores.f1},
                                {"tp", d.counts.tp},
                                {"fp", d.counts.fp},
                                {"fn", d.counts.fn},
                                {"degenerate", d.scores.degenerate}});
    }
    for (const auto& s : r.segmentation) {
        ojson per_class = ojson::object();
        for (std::size_t c = 0; c < s.scores.per_class.size(); ++c) {
            const auto name = c < r.classes.size() ? r.classes[c] : std::to_string(c);
            per_class[name] = optional_json(s.scores.per_class[c]);
        }
        doc["bands"].push_back({{"band", s.band},
                                {"class_iou", per_class},
                                {"mean_iou", s.scores.mean},
                                {"skipped_classes", s.scores.skipped_classes}});
    }
    for (const auto& a : r.agreement) doc["bands"].push_back({{"band", a.band}, {"agreement_iou", optional_json(a.iou)}});
    doc["config"] = ojson::object();
    for (const auto& [k, v] : r.config) doc["config"][k] = v;
    return doc.dump(2) + "\n";
}

std::string report_csv(const EvalReport& r)
{
    std::string out;
    if (r.task == "detect") {
        out = "Band,Precision,Recall,F1\n";
        for (const auto& d : r.detection)
            out += d.band + ',' + fixed2(d.scores.precision) + ',' + fixed2(d.scores.recall) + ',' +
                   fixed2(d.scores.f1) + '\n';
    } else if (r.task == "segment") {
        out = "Band";
        for (const auto& c : r.classes) out += ',' + c;
        out += ",Mean IoU\n";
        for (const auto& s : r.segmentation) {
            out += s.band;
            for (const auto& v : s.scores.per_class) out += ',' + (v ? fixed2(*v) : std::string("NA"));
            out += ',' + fixed2(s.scores.mean) + '\n';
        }
    } else {
        out = "Band,Agreement IoU\n";
        for (const auto& a : r.agreement) out += a.band + ',' + (a.iou ? fixed2(*a.iou) : std::string("NA")) + '\n';
    }
    return out;
}

void write_report(const EvalReport& report, const fs::path& dir)
{
    fs::create_directories(dir);
    std::ofstream(dir / "report.json", std::ios::binary) << report_json(report);
    std::ofstream(dir / "report.csv", std::ios::binary) << report_csv(report);
}

EvalReport evaluate_detection(const core::DatasetManifest& pred, const core::DatasetManifest& gt, double min_score)
{
    check_bands(pred, gt);
    std::vector<std::size_t> gt_idx;
    const auto pred_idx = shared_samples(pred, gt, gt_idx);
    EvalReport r;
    r.task = "detect";
    for (const auto& band : gt.bands) {
        BandDetection row;
        row.band = band.name;
        for (std::size_t k = 0; k < pred_idx.size(); ++k) {
            auto p = core::read_boxes_csv(pred.resolve(pred.samples[pred_idx[k]].bands.at(band.name).boxes));
            std::erase_if(p, [&](const core::BoundingBox& b) { return b.score && *b.score < min_score; });
            const auto g = core::read_boxes_csv(gt.resolve(gt.samples[gt_idx[k]].bands.at(band.name).boxes));
            row.counts += counts_of(match_detections(p, g));
        }
        row.scores = prf1(row.counts);
        r.detection.push_back(row);
    }
    r.config["samples"] = std::to_string(pred_idx.size());
    r.config["min_score"] = core::format_real(min_score);
    return r;
}

EvalReport evaluate_segmentation(const core::DatasetManifest& pred, const core::DatasetManifest& gt)
{
    check_bands(pred, gt);
    std::vector<std::size_t> gt_idx;
    const auto pred_idx = shared_samples(pred, gt, gt_idx);
    EvalReport r;
    r.task = "segment";
    r.classes = gt.classes;
    for (const auto& band : gt.bands) {
        // Bands the predictor never produced masks for (e.g. a single-band
        // model run on a multi-band dataset) are left out of the report.
        const bool predicted = std::any_of(pred_idx.begin(), pred_idx.end(), [&](std::size_t i) {
            return pred.samples[i].bands.at(band.name).mask.has_value();
        });
        if (!predicted) continue;
        IouTally tally(gt.classes.size());
        for (std::size_t k = 0; k < pred_idx.size(); ++k) {
            const auto& pf = pred.samples[pred_idx[k]].bands.at(band.name);
            const auto& gf = gt.samples[gt_idx[k]].bands.at(band.name);
            if (!pf.mask || !gf.mask) throw DataError("sample lacks a mask", gt.samples[gt_idx[k]].id, band.name);
            tally.add(core::read_mask_png(pred.resolve(*pf.mask), gt.classes),
                      core::read_mask_png(gt.resolve(*gf.mask), gt.classes));
        }
        r.segmentation.push_back({band.name, tally.scores()});
    }
    r.config["samples"] = std::to_string(pred_idx.size());
    return r;
}

EvalReport evaluate_agreement(const core::DatasetManifest& a, const core::DatasetManifest& b, int class_id)
{
    check_bands(a, b);
    std::vector<std::size_t> b_idx;
    const auto a_idx = shared_samples(a, b, b_idx);
    EvalReport r;
    r.task = "agreement";
    for (const auto& band : a.bands) {
        long inter = 0;
        long uni = 0;
        for (std::size_t k = 0; k < a_idx.size(); ++k) {
            const auto& fa = a.samples[a_idx[k]].bands.at(band.name);
            const auto& fb = b.samples[b_idx[k]].bands.at(band.name);
            if (!fa.mask || !fb.mask) throw DataError("sample lacks a mask", a.samples[a_idx[k]].id, band.name);
            const auto ma = core::read_mask_png(a.resolve(*fa.mask), a.classes);
            const auto mb = core::read_mask_png(b.resolve(*fb.mask), a.classes);
            if (ma.labels.size() != mb.labels.size()) throw DataError("masks differ in shape", a.samples[a_idx[k]].id);
            for (std::size_t i = 0; i < ma.labels.size(); ++i) {
                const bool in_a = ma.labels[i] == class_id;
                const bool in_b = mb.labels[i] == class_id;
                inter += in_a && in_b;
                uni += in_a || in_b;
            }
        }
        r.agreement.push_back({band.name, uni > 0 ? std::optional<double>(static_cast<double>(inter) / uni) : std::nullopt});
    }
    r.config["class_id"] = std::to_string(class_id);
    r.config["samples"] = std::to_string(a_idx.size());
    return r;
}

}  // namespace mlmt::eval
