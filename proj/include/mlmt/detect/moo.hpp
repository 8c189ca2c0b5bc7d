#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>

#include "mlmt/core/tensor_io.hpp"

namespace mlmt::detect {

enum class Stage { feature_extraction = 0, rpn = 1, detection = 2 };
inline constexpr std::array<Stage, 3> kStages{Stage::feature_extraction, Stage::rpn, Stage::detection};

std::string to_string(Stage s);

struct StageSnapshot {
    core::NamedTensors weights;
    double best_loss = std::numeric_limits<double>::infinity();
    int epoch = -1;  // -1 until the first update
};

/// Best weights per network stage, each tracked against its own loss.
struct StageCheckpointSet {
    std::array<StageSnapshot, 3> stages;

    StageSnapshot& operator[](Stage s) { return stages[static_cast<std::size_t>(s)]; }
    const StageSnapshot& operator[](Stage s) const { return stages[static_cast<std::size_t>(s)]; }
};

using StageLosses = std::array<double, 3>;  // indexed like Stage
using StageWeightsFn = std::function<core::NamedTensors(Stage)>;

/// Replaces a stage's snapshot iff its loss is strictly below the stored
/// best; ties keep the earlier epoch. `weights` is only called for stages
/// that improve. Non-finite losses never update.
StageCheckpointSet moo_update(StageCheckpointSet store, int epoch, const StageLosses& losses,
                              const StageWeightsFn& weights);

/// Layout `<dir>/<stage>/weights.bin` and `<dir>/<stage>/meta.json`
/// (best_loss, epoch). Stages that never updated are skipped.
void save_checkpoints(const StageCheckpointSet& store, const std::filesystem::path& dir);
StageCheckpointSet load_checkpoints(const std::filesystem::path& dir);

}  // namespace mlmt::detect
