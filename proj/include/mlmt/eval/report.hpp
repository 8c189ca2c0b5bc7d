#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mlmt/core/manifest.hpp"
#include "mlmt/eval/metrics.hpp"

namespace mlmt::eval {

struct BandDetection {
    std::string band;
    Counts counts;
    PrF1 scores;
};

struct BandSegmentation {
    std::string band;
    IouScores scores;
};

struct BandAgreement {
    std::string band;
    std::optional<double> iou;
};

/// Evaluation outcome for one task, laid out band by band like the
/// results tables: P/R/F1 rows for detection, per-class IoU plus mean for
/// segmentation, one IoU per band for method agreement.
struct EvalReport {
    std::string task;  // "detect", "segment" or "agreement"
    std::vector<std::string> classes;
    std::vector<BandDetection> detection;
    std::vector<BandSegmentation> segmentation;
    std::vector<BandAgreement> agreement;
    std::map<std::string, std::string> config;
};

std::string report_json(const EvalReport& report);
std::string report_csv(const EvalReport& report);

/// Writes `report.json` and `report.csv` into `dir`.
void write_report(const EvalReport& report, const std::filesystem::path& dir);

/// Per-band detection counts pooled over samples present in both manifests
/// (matched by sample id). Predictions below `min_score` are dropped.
EvalReport evaluate_detection(const core::DatasetManifest& predictions, const core::DatasetManifest& ground_truth,
                              double min_score = 0.0);

/// Per-band IoU pooled over samples. Bands without any predicted mask are
/// skipped; otherwise every sample needs masks on both sides.
EvalReport evaluate_segmentation(const core::DatasetManifest& predictions, const core::DatasetManifest& ground_truth);

/// Per-band agreement of two methods' masks on `class_id`.
EvalReport evaluate_agreement(const core::DatasetManifest& a, const core::DatasetManifest& b, int class_id);

}  // namespace mlmt::eval
