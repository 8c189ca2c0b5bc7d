#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "mlmt/core/augment.hpp"
#include "mlmt/core/manifest.hpp"
#include "mlmt/core/tensor_io.hpp"
#include "mlmt/detect/model.hpp"
#include "mlmt/detect/moo.hpp"
#include "mlmt/segment/model.hpp"

namespace mlmt::train {

enum class Task { detect, segment };

inline constexpr double kDefaultDetectLearningRate = 2e-5;
inline constexpr double kDefaultSegmentLearningRate = 4e-3;
inline constexpr int kDefaultDetectEpochs = 3000;
inline constexpr int kDefaultSegmentEpochs = 250;

struct TrainConfig {
    Task task = Task::detect;
    std::optional<int> epochs;             // unset: task default
    std::optional<double> learning_rate;   // unset: task default
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 4;
    /// Used only when no validation manifest is supplied.
    double validation_fraction = 0.0;
    std::uint64_t seed = 0;
    /// Detection only: epochs before this count are not eligible for stage
    /// snapshots. Early head losses are measured on proposals from an
    /// untrained RPN (nearly all easy negatives) and are not comparable with
    /// later ones. 0 keeps every epoch.
    int moo_warmup_epochs = 0;
    int max_recursion_rounds = 3;
    /// Round r+1 counts as an improvement only if its validation loss is
    /// below round r's by more than this.
    double recursion_tolerance = 1e-4;
    std::filesystem::path checkpoint_dir;  // empty: keep in memory only
    core::AugmentationSpec augment;
    int workers = 1;
    bool verbose = false;

    int resolved_epochs() const;
    double resolved_learning_rate() const;
    void validate() const;
};

/// Non-finite loss. Carries where it happened.
class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(int epoch, int batch, double loss);
    int epoch() const { return epoch_; }
    int batch() const { return batch_; }

private:
    int epoch_;
    int batch_;
};

struct DetectEpoch {
    int epoch = 0;
    double train_rpn = 0;
    double train_head = 0;
    std::optional<double> val_rpn;
    std::optional<double> val_head;
};

struct DetectTrainResult {
    detect::StageCheckpointSet checkpoints;
    std::vector<DetectEpoch> history;
};

/// Joint optimisation of every band's RPN and head terms with Adam. RPN
/// targets come from each band's own boxes and proposals are never shared
/// between bands while training. After each epoch the stage losses
/// (feature extraction: total, rpn, detection head) feed moo_update; they are
/// validation losses when a validation set exists, epoch means otherwise.
DetectTrainResult train_detection(const TrainConfig& cfg, const detect::DetectorConfig& model_cfg,
                                  const core::DatasetManifest& train, const core::DatasetManifest* val = nullptr);

/// In-memory variant used by the manifest version.
DetectTrainResult train_detection(const TrainConfig& cfg, const detect::DetectorConfig& model_cfg,
                                  const std::vector<core::MultiLayerSample>& train,
                                  const std::vector<core::MultiLayerSample>& val);

/// Crops around every ground-truth box of every band: images [K, B, P, P]
/// and labels [K, B, P, P] (int64), labels taken from each band's own mask.
struct PatchSet {
    torch::Tensor images;
    torch::Tensor labels;
    std::size_t size() const { return images.defined() ? static_cast<std::size_t>(images.size(0)) : 0; }
};
PatchSet build_patch_set(const std::vector<core::MultiLayerSample>& samples, const std::vector<std::string>& bands,
                         int patch_size);

struct SegEpoch {
    int epoch = 0;
    double train_loss = 0;  // mean per pixel
    double val_loss = 0;    // mean per pixel; train loss when no validation data
    double best_val_loss = 0;
};

struct SegTrainResult {
    core::NamedTensors best_weights;
    double best_val_loss = 0;
    int best_epoch = 0;
    std::vector<SegEpoch> history;
};

/// Adam on the weighted cross entropy over patches cropped at the
/// ground-truth boxes. Keeps the weights of the epoch with the lowest
/// validation loss (per-pixel mean).
SegTrainResult train_segmentation(const TrainConfig& cfg, const segment::SegModelConfig& model_cfg,
                                  const PatchSet& train, const PatchSet& val);
SegTrainResult train_segmentation(const TrainConfig& cfg, const segment::SegModelConfig& model_cfg,
                                  const core::DatasetManifest& train, const core::DatasetManifest* val = nullptr);

/// Argmax labels of `model` on every patch, [K, B, P, P] int64.
torch::Tensor predict_patch_labels(segment::SegNet& model, const torch::Tensor& images);

struct RoundReport {
    int round = 0;
    double train_loss = 0;
    double val_loss = 0;
    int best_epoch = 0;
    std::optional<double> metric;  // e.g. mean IoU against reference masks
    core::NamedTensors weights;
};

struct RecursiveResult {
    std::vector<RoundReport> rounds;
    int best_round = 1;  // 1-based
    const RoundReport& best() const { return rounds.at(static_cast<std::size_t>(best_round - 1)); }
};

using RoundMetric = std::function<std::optional<double>(segment::SegNet&)>;

/// Round 1 trains on the weak labels. Round r+1 starts from fresh random
/// weights and trains on round r's argmax predictions over the same
/// training patches. Validation keeps its original labels throughout.
/// Stops after the first round whose validation loss is not below the
/// previous one by more than cfg.recursion_tolerance, or at
/// cfg.max_recursion_rounds. The best round has the lowest validation loss.
RecursiveResult recursive_train(const TrainConfig& cfg, const segment::SegModelConfig& model_cfg,
                                const PatchSet& weak_train, const PatchSet& val, const RoundMetric& metric = {});
RecursiveResult recursive_train(const TrainConfig& cfg, const segment::SegModelConfig& model_cfg,
                                const core::DatasetManifest& weak_train, const core::DatasetManifest* val = nullptr,
                                const RoundMetric& metric = {});

/// `rounds.json`: per-round losses, metric and the selected round.
void write_rounds_json(const RecursiveResult& result, const std::filesystem::path& path);

/// Loads samples and applies the configured mirror augmentation.
std::vector<core::MultiLayerSample> load_training_samples(const core::DatasetManifest& m,
                                                          const core::AugmentationSpec& augment);

}  // namespace mlmt::train
