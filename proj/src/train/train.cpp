#include "mlmt/train/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>

#include <json.hpp>

#include "mlmt/core/resample.hpp"
#include "mlmt/segment/loss.hpp"

namespace mlmt::train {

namespace fs = std::filesystem;
using core::DataError;

int TrainConfig::resolved_epochs() const
{
    return epochs.value_or(task == Task::detect ? kDefaultDetectEpochs : kDefaultSegmentEpochs);
}

double TrainConfig::resolved_learning_rate() const
{
    return learning_rate.value_or(task == Task::detect ? kDefaultDetectLearningRate : kDefaultSegmentLearningRate);
}

void TrainConfig::validate() const
{
    if (resolved_epochs() < 1) throw DataError("epochs must be at least 1");
    if (!(resolved_learning_rate() > 0)) throw DataError("learning_rate must be positive");
    if (batch_size < 1) throw DataError("batch_size must be at least 1");
    if (validation_fraction < 0 || validation_fraction >= 1) throw DataError("validation_fraction must lie in [0, 1)");
    if (max_recursion_rounds < 1) throw DataError("max_recursion_rounds must be at least 1");
    if (workers < 1) throw DataError("workers must be at least 1");
    if (moo_warmup_epochs < 0 || moo_warmup_epochs >= resolved_epochs())
        throw DataError("moo_warmup_epochs must lie in [0, epochs)");
}

TrainingDiverged::TrainingDiverged(int epoch, int batch, double loss)
    : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                         " (loss " + std::to_string(loss) + ")"),
      epoch_(epoch),
      batch_(batch)
{
}

namespace {

torch::optim::Adam make_adam(torch::nn::Module& model, const TrainConfig& cfg)
{
    return torch::optim::Adam(model.parameters(), torch::optim::AdamOptions(cfg.resolved_learning_rate())
                                                      .betas({cfg.adam_beta1, cfg.adam_beta2})
                                                      .eps(cfg.adam_eps));
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed)
{
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
    std::uint64_t out[1];
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    out[0] = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    return out[0];
}

/// Splits off a validation share when none was supplied.
void carve_validation(std::vector<core::MultiLayerSample>& train, std::vector<core::MultiLayerSample>& val,
                      double fraction, std::uint64_t seed)
{
    if (!val.empty() || fraction <= 0 || train.size() < 2) return;
    const auto order = shuffled(train.size(), mix(seed, 0x7661));
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * train.size())));
    std::vector<core::MultiLayerSample> keep;
    for (std::size_t k = 0; k < order.size(); ++k) (k < n_val ? val : keep).push_back(std::move(train[order[k]]));
    train = std::move(keep);
}

torch::Tensor stack_images(const std::vector<core::MultiLayerSample>& samples, const std::vector<std::size_t>& idx,
                           const std::vector<std::string>& bands)
{
    std::vector<torch::Tensor> parts;
    for (auto i : idx) parts.push_back(detect::sample_tensor(samples[i], bands));
    return torch::stack(parts);
}

std::vector<detect::BandBoxes> gather_boxes(const std::vector<core::MultiLayerSample>& samples,
                                            const std::vector<std::size_t>& idx)
{
    std::vector<detect::BandBoxes> out;
    for (auto i : idx) out.push_back(samples[i].detections);
    return out;
}

struct DetectMeans {
    double rpn = 0;
    double head = 0;
};

DetectMeans evaluate_detection_losses(detect::Detector& model, const std::vector<core::MultiLayerSample>& samples,
                                      int batch_size, std::uint64_t seed)
{
    torch::NoGradGuard guard;
    std::mt19937_64 rng(seed);  // same sampling every epoch
    DetectMeans m;
    int batches = 0;
    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
        std::vector<std::size_t> idx;
        for (std::size_t k = start; k < std::min(samples.size(), start + batch_size); ++k) idx.push_back(k);
        const auto losses = model->losses(stack_images(samples, idx, model->config().bands), gather_boxes(samples, idx), rng);
        m.rpn += losses.rpn.item<double>();
        m.head += losses.head.item<double>();
        ++batches;
    }
    if (batches > 0) {
        m.rpn /= batches;
        m.head /= batches;
    }
    return m;
}

}  // namespace

std::vector<core::MultiLayerSample> load_training_samples(const core::DatasetManifest& m,
                                                          const core::AugmentationSpec& augment)
{
    std::vector<core::MultiLayerSample> out;
    for (const auto& s : core::load_all_samples(m)) {
        auto copies = core::augment(s, augment);
        out.insert(out.end(), std::make_move_iterator(copies.begin()), std::make_move_iterator(copies.end()));
    }
    return out;
}

DetectTrainResult train_detection(const TrainConfig& cfg, const detect::DetectorConfig& model_cfg,
                                  const std::vector<core::MultiLayerSample>& train,
                                  const std::vector<core::MultiLayerSample>& val)
{
    cfg.validate();
    if (train.empty()) throw DataError("no training samples");
    torch::set_num_threads(cfg.workers);
    torch::manual_seed(cfg.seed);
    detect::Detector model(model_cfg);
    auto adam = make_adam(*model, cfg);

    DetectTrainResult result;
    const int epochs = cfg.resolved_epochs();
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        model->train();
        const auto order = shuffled(train.size(), mix(cfg.seed, 1, static_cast<std::uint64_t>(epoch)));
        std::mt19937_64 rng(mix(cfg.seed, 2, static_cast<std::uint64_t>(epoch)));
        DetectEpoch log;
        log.epoch = epoch;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(
                                                                   std::min(order.size(), start + cfg.batch_size)));
            auto losses = model->losses(stack_images(train, idx, model_cfg.bands), gather_boxes(train, idx), rng);
            auto total = losses.total();
            const double value = total.item<double>();
            if (!std::isfinite(value)) throw TrainingDiverged(epoch, batches, value);
            adam.zero_grad();
            total.backward();
            adam.step();
            log.train_rpn += losses.rpn.item<double>();
            log.train_head += losses.head.item<double>();
            ++batches;
        }
        log.train_rpn /= batches;
        log.train_head /= batches;

        detect::StageLosses stage{log.train_rpn + log.train_head, log.train_rpn, log.train_head};
        if (!val.empty()) {
            const auto v = evaluate_detection_losses(model, val, cfg.batch_size, mix(cfg.seed, 3));
            log.val_rpn = v.rpn;
            log.val_head = v.head;
            stage = {v.rpn + v.head, v.rpn, v.head};
        }
        if (epoch > cfg.moo_warmup_epochs)
            result.checkpoints = detect::moo_update(std::move(result.checkpoints), epoch, stage, [&](detect::Stage s) {
            core::NamedTensors kept;
            const auto prefixes = detect::DetectorImpl::stage_prefixes(s);
            for (auto& [name, t] : core::module_state(*model))
                for (const auto& p : prefixes)
                    if (name.rfind(p, 0) == 0) kept.emplace_back(name, t);
            return kept;
        });
        if (cfg.verbose)
            std::cerr << "epoch " << epoch << " rpn " << log.train_rpn << " head " << log.train_head
                      << (log.val_rpn ? " val " + std::to_string(*log.val_rpn + *log.val_head) : std::string()) << "\n";
        result.history.push_back(log);
    }
    if (!cfg.checkpoint_dir.empty()) detect::save_checkpoints(result.checkpoints, cfg.checkpoint_dir);
    return result;
}

DetectTrainResult train_detection(const TrainConfig& cfg, const detect::DetectorConfig& model_cfg,
                                  const core::DatasetManifest& train, const core::DatasetManifest* val)
{
    auto train_samples = load_training_samples(train, cfg.augment);
    std::vector<core::MultiLayerSample> val_samples;
    if (val) val_samples = core::load_all_samples(*val);
    carve_validation(train_samples, val_samples, cfg.validation_fraction, cfg.seed);
    return train_detection(cfg, model_cfg, train_samples, val_samples);
}

PatchSet build_patch_set(const std::vector<core::MultiLayerSample>& samples, const std::vector<std::string>& bands,
                         int patch)
{
    std::vector<torch::Tensor> images;
    std::vector<torch::Tensor> labels;
    for (const auto& s : samples) {
        for (const auto& band : bands) {
            auto it = s.detections.find(band);
            if (it == s.detections.end()) throw DataError("sample lacks boxes", s.sample_id, band);
            for (const auto& box : it->second) {
                images.push_back(segment::crop_stack(s, bands, box, patch));
                auto lab = torch::empty({static_cast<int64_t>(bands.size()), patch, patch}, torch::kInt64);
                for (std::size_t b = 0; b < bands.size(); ++b) {
                    auto m = s.masks.find(bands[b]);
                    if (m == s.masks.end()) throw DataError("sample lacks a mask", s.sample_id, bands[b]);
                    const auto crop = core::crop_and_resize_labels(m->second, box, patch);
                    auto row = lab[static_cast<int64_t>(b)];
                    auto acc = row.accessor<int64_t, 2>();
                    for (int y = 0; y < patch; ++y)
                        for (int x = 0; x < patch; ++x) acc[y][x] = crop[static_cast<std::size_t>(y) * patch + x];
                }
                labels.push_back(lab);
            }
        }
    }
    PatchSet set;
    if (!images.empty()) {
        set.images = torch::stack(images);
        set.labels = torch::stack(labels);
    }
    return set;
}

namespace {

double patch_loss(segment::SegNet& model, const torch::Tensor& images, const torch::Tensor& labels,
                  const std::vector<double>& weights, bool keep_graph, torch::Tensor* graph_out)
{
    const auto logits = model->forward(images);
    segment::SegBatch batch;
    for (std::size_t b = 0; b < logits.size(); ++b) {
        batch.logits.push_back(logits[b]);
        batch.labels.push_back(labels.select(1, static_cast<int64_t>(b)));
    }
    auto loss = segment::segmentation_loss(batch, weights);
    if (keep_graph) *graph_out = loss;
    return loss.item<double>();
}

double mean_loss(segment::SegNet& model, const PatchSet& set, const std::vector<double>& weights, int batch_size)
{
    torch::NoGradGuard guard;
    double total = 0;
    for (int64_t start = 0; start < static_cast<int64_t>(set.size()); start += batch_size) {
        const auto end = std::min<int64_t>(static_cast<int64_t>(set.size()), start + batch_size);
        total += patch_loss(model, set.images.slice(0, start, end), set.labels.slice(0, start, end), weights, false,
                            nullptr);
    }
    return total / static_cast<double>(set.labels.numel());
}

SegTrainResult train_segmentation_seeded(const TrainConfig& cfg, const segment::SegModelConfig& model_cfg,
                                         const PatchSet& train, const PatchSet& val, std::uint64_t seed)
{
    cfg.validate();
    if (train.size() == 0) throw DataError("no training patches (no ground-truth boxes?)");
    if (train.images.size(1) != static_cast<int64_t>(model_cfg.bands.size()) ||
        train.images.size(2) != model_cfg.patch_size)
        throw DataError("patch set does not match the model's bands or patch size");
    torch::set_num_threads(cfg.workers);
    torch::manual_seed(seed);
    segment::SegNet model(model_cfg);
    auto adam = make_adam(*model, cfg);
    const auto weights = model_cfg.weights();

    SegTrainResult result;
    result.best_val_loss = std::numeric_limits<double>::infinity();
    const int epochs = cfg.resolved_epochs();
    const auto n = static_cast<int64_t>(train.size());
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        const auto order = shuffled(static_cast<std::size_t>(n), mix(seed, 4, static_cast<std::uint64_t>(epoch)));
        const auto perm = torch::tensor(std::vector<int64_t>(order.begin(), order.end()), torch::kInt64);
        double sum = 0;
        int batch = 0;
        for (int64_t start = 0; start < n; start += cfg.batch_size, ++batch) {
            const auto idx = perm.slice(0, start, std::min(n, start + cfg.batch_size));
            torch::Tensor loss;
            const double value = patch_loss(model, train.images.index_select(0, idx), train.labels.index_select(0, idx),
                                             weights, true, &loss);
            if (!std::isfinite(value)) throw TrainingDiverged(epoch, batch, value);
            adam.zero_grad();
            loss.backward();
            adam.step();
            sum += value;
        }
        SegEpoch log;
        log.epoch = epoch;
        log.train_loss = sum / static_cast<double>(train.labels.numel());
        log.val_loss = val.size() > 0 ? mean_loss(model, val, weights, cfg.batch_size) : log.train_loss;
        if (log.val_loss < result.best_val_loss) {
            result.best_val_loss = log.val_loss;
            result.best_epoch = epoch;
            result.best_weights = core::module_state(*model);
        }
        log.best_val_loss = result.best_val_loss;
        if (cfg.verbose)
            std::cerr << "epoch " << epoch << " train " << log.train_loss << " val " << log.val_loss << "\n";
        result.history.push_back(log);
    }
    return result;
}

}  // namespace

SegTrainResult train_segmentation(const TrainConfig& cfg, const segment::SegModelConfig& model_cfg,
                                  const PatchSet& train, const PatchSet& val)
{
    auto result = train_segmentation_seeded(cfg, model_cfg, train, val, cfg.seed);
    if (!cfg.checkpoint_dir.empty()) {
        core::save_named_tensors(result.best_weights, cfg.checkpoint_dir / "weights.bin");
        nlohmann::ordered_json meta{{"best_loss", result.best_val_loss}, {"epoch", result.best_epoch}};
        std::ofstream(cfg.checkpoint_dir / "meta.json") << meta.dump(2) << "\n";
    }
    return result;
}

namespace {

std::pair<PatchSet, PatchSet> manifest_patches(const TrainConfig& cfg, const segment::SegModelConfig& model_cfg,
                                               const core::DatasetManifest& train, const core::DatasetManifest* val)
{
    auto train_samples = load_training_samples(train, cfg.augment);
    std::vector<core::MultiLayerSample> val_samples;
    if (val) val_samples = core::load_all_samples(*val);
    carve_validation(train_samples, val_samples, cfg.validation_fraction, cfg.seed);
    return {build_patch_set(train_samples, model_cfg.bands, model_cfg.patch_size),
            build_patch_set(val_samples, model_cfg.bands, model_cfg.patch_size)};
}

}  // namespace

SegTrainResult train_segmentation(const TrainConfig& cfg, const segment::SegModelConfig& model_cfg,
                                  const core::DatasetManifest& train, const core::DatasetManifest* val)
{
    const auto [tr, va] = manifest_patches(cfg, model_cfg, train, val);
    return train_segmentation(cfg, model_cfg, tr, va);
}

torch::Tensor predict_patch_labels(segment::SegNet& model, const torch::Tensor& images)
{
    torch::NoGradGuard guard;
    std::vector<torch::Tensor> chunks;
    constexpr int64_t kChunk = 32;
    for (int64_t start = 0; start < images.size(0); start += kChunk) {
        const auto logits = model->forward(images.slice(0, start, std::min(images.size(0), start + kChunk)));
        std::vector<torch::Tensor> per_band;
        for (const auto& l : logits) per_band.push_back(l.argmax(1));
        chunks.push_back(torch::stack(per_band, 1));
    }
    return torch::cat(chunks).to(torch::kInt64);
}

RecursiveResult recursive_train(const TrainConfig& cfg, const segment::SegModelConfig& model_cfg,
                                const PatchSet& weak_train, const PatchSet& val, const RoundMetric& metric)
{
    cfg.validate();
    RecursiveResult result;
    PatchSet current = weak_train;
    for (int round = 1; round <= cfg.max_recursion_rounds; ++round) {
        // Round 1 uses the configured seed; later rounds draw fresh streams.
        const auto seed = round == 1 ? cfg.seed : mix(cfg.seed, 5, static_cast<std::uint64_t>(round));
        auto trained = train_segmentation_seeded(cfg, model_cfg, current, val, seed);
        segment::SegNet model(model_cfg);
        core::load_module_state(*model, trained.best_weights);

        RoundReport report;
        report.round = round;
        report.val_loss = trained.best_val_loss;
        report.best_epoch = trained.best_epoch;
        report.train_loss = trained.history.at(static_cast<std::size_t>(trained.best_epoch - 1)).train_loss;
        if (metric) report.metric = metric(model);
        report.weights = std::move(trained.best_weights);
        if (cfg.verbose)
            std::cerr << "round " << round << " val " << report.val_loss
                      << (report.metric ? " metric " + std::to_string(*report.metric) : std::string()) << "\n";
        result.rounds.push_back(std::move(report));

        const auto& now = result.rounds.back();
        if (round > 1 && now.val_loss >= result.rounds[result.rounds.size() - 2].val_loss - cfg.recursion_tolerance)
            break;
        if (round < cfg.max_recursion_rounds) current = {weak_train.images, predict_patch_labels(model, weak_train.images)};
    }
    result.best_round = 1;
    for (const auto& r : result.rounds)
        if (r.val_loss < result.best().val_loss) result.best_round = r.round;
    if (!cfg.checkpoint_dir.empty()) {
        core::save_named_tensors(result.best().weights, cfg.checkpoint_dir / "weights.bin");
        write_rounds_json(result, cfg.checkpoint_dir / "rounds.json");
    }
    return result;
}

RecursiveResult recursive_train(const TrainConfig& cfg, const segment::SegModelConfig& model_cfg,
                                const core::DatasetManifest& weak_train, const core::DatasetManifest* val,
                                const RoundMetric& metric)
{
    const auto [tr, va] = manifest_patches(cfg, model_cfg, weak_train, val);
    return recursive_train(cfg, model_cfg, tr, va, metric);
}

void write_rounds_json(const RecursiveResult& result, const fs::path& path)
{
    nlohmann::ordered_json doc;
    doc["best_round"] = result.best_round;
    doc["rounds"] = nlohmann::ordered_json::array();
    for (const auto& r : result.rounds) {
        nlohmann::ordered_json row{{"round", r.round},
                                   {"train_loss", r.train_loss},
                                   {"val_loss", r.val_loss},
                                   {"best_epoch", r.best_epoch}};
        row["metric"] = r.metric ? nlohmann::ordered_json(*r.metric) : nlohmann::ordered_json(nullptr);
        doc["rounds"].push_back(row);
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream(path) << doc.dump(2) << "\n";
}

}  // namespace mlmt::train
