#include "mlmt/detect/moo.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace mlmt::detect {

namespace fs = std::filesystem;

std::string to_string(Stage s)
{
    switch (s) {
    case Stage::feature_extraction: return "feature_extraction";
    case Stage::rpn: return "rpn";
    case Stage::detection: return "detection";
    }
    return "?";
}

StageCheckpointSet moo_update(StageCheckpointSet store, int epoch, const StageLosses& losses,
                              const StageWeightsFn& weights)
{
    for (Stage s : kStages) {
        const double loss = losses[static_cast<std::size_t>(s)];
        auto& snap = store[s];
        if (!std::isfinite(loss) || !(loss < snap.best_loss)) continue;
        snap.best_loss = loss;
        snap.epoch = epoch;
        snap.weights = weights(s);
    }
    return store;
}

void save_checkpoints(const StageCheckpointSet& store, const fs::path& dir)
{
    for (Stage s : kStages) {
        const auto& snap = store[s];
        if (snap.epoch < 0) continue;
        const auto sub = dir / to_string(s);
        fs::create_directories(sub);
        core::save_named_tensors(snap.weights, sub / "weights.bin");
        nlohmann::ordered_json meta{{"stage", to_string(s)}, {"best_loss", snap.best_loss}, {"epoch", snap.epoch}};
        std::ofstream(sub / "meta.json") << meta.dump(2) << "\n";
    }
}

StageCheckpointSet load_checkpoints(const fs::path& dir)
{
    StageCheckpointSet store;
    bool any = false;
    for (Stage s : kStages) {
        const auto sub = dir / to_string(s);
        if (!fs::exists(sub / "meta.json")) continue;
        std::ifstream in(sub / "meta.json");
        const auto meta = nlohmann::json::parse(in);
        auto& snap = store[s];
        snap.best_loss = meta.at("best_loss").get<double>();
        snap.epoch = meta.at("epoch").get<int>();
        snap.weights = core::load_named_tensors(sub / "weights.bin");
        any = true;
    }
    if (!any) throw std::runtime_error("no stage checkpoints under " + dir.string());
    return store;
}

}  // namespace mlmt::detect
