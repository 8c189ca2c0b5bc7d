#include "mlmt/detect/fusion.hpp"

#include <stdexcept>

namespace mlmt::detect {

FusionStage parse_fusion_stage(const std::string& s)
{
    if (s == "early") return FusionStage::early;
    if (s == "late") return FusionStage::late;
    throw std::invalid_argument("fusion stage must be 'early' or 'late', got '" + s + "'");
}

FusionOp parse_fusion_op(const std::string& s)
{
    if (s == "concat" || s == "concatenate") return FusionOp::concatenate;
    if (s == "add") return FusionOp::add;
    throw std::invalid_argument("fusion op must be 'concat' or 'add', got '" + s + "'");
}

std::string to_string(FusionStage s) { return s == FusionStage::early ? "early" : "late"; }
std::string to_string(FusionOp op) { return op == FusionOp::concatenate ? "concat" : "add"; }

torch::Tensor fuse_features(const std::vector<torch::Tensor>& maps, FusionOp op)
{
    if (maps.empty()) throw std::invalid_argument("nothing to fuse");
    const auto& ref = maps.front();
    if (ref.dim() != 4) throw std::invalid_argument("feature maps must be [N, C, H, W]");
    for (const auto& m : maps) {
        if (m.dim() != 4 || m.size(0) != ref.size(0) || m.size(2) != ref.size(2) || m.size(3) != ref.size(3))
            throw std::invalid_argument("feature maps differ in batch or spatial size");
        if (op == FusionOp::add && m.size(1) != ref.size(1))
            throw std::invalid_argument("additive fusion needs equal channel counts");
    }
    if (maps.size() == 1) return ref;
    if (op == FusionOp::concatenate) return torch::cat(maps, 1);
    auto sum = maps[0];
    for (std::size_t i = 1; i < maps.size(); ++i) sum = sum + maps[i];
    return sum;
}

}  // namespace mlmt::detect
