#include "mlmt/detect/loss.hpp"

#include <stdexcept>

namespace mlmt::detect {

namespace {

using torch::autograd::AutogradContext;
using torch::autograd::variable_list;

class DetectionLossFn : public torch::autograd::Function<DetectionLossFn> {
public:
    static torch::Tensor forward(AutogradContext* ctx, torch::Tensor probs, torch::Tensor deltas,
                                 torch::Tensor labels, torch::Tensor targets, double n_cls, double n_reg,
                                 double lambda)
    {
        const auto pos = labels.eq(1).to(probs.dtype());
        const auto neg = labels.eq(0).to(probs.dtype());
        const auto eps = kDetectionLogEpsilon;
        const auto p_safe = probs.clamp_min(eps);
        const auto q_safe = (1 - probs).clamp_min(eps);
        const auto cls = -(pos * p_safe.log() + neg * q_safe.log()).sum() / n_cls;

        const auto diff = deltas - targets;
        const auto a = diff.abs();
        const auto smooth = torch::where(a < 1, 0.5 * diff * diff, a - 0.5);
        const auto reg = (smooth.sum(1) * pos).sum() * (lambda / n_reg);

        ctx->save_for_backward({p_safe, q_safe, pos, neg, diff});
        ctx->saved_data["n_cls"] = n_cls;
        ctx->saved_data["n_reg"] = n_reg;
        ctx->saved_data["lambda"] = lambda;
        return cls + reg;
    }

    static variable_list backward(AutogradContext* ctx, variable_list grad_out)
    {
        const auto saved = ctx->get_saved_variables();
        const auto& p_safe = saved[0];
        const auto& q_safe = saved[1];
        const auto& pos = saved[2];
        const auto& neg = saved[3];
        const auto& diff = saved[4];
        const double n_cls = ctx->saved_data["n_cls"].toDouble();
        const double n_reg = ctx->saved_data["n_reg"].toDouble();
        const double lambda = ctx->saved_data["lambda"].toDouble();
        const auto g = grad_out[0];

        // Where the log is clamped the slope of the boundary is kept, so
        // saturated probabilities still get pushed the right way.
        const auto d_probs = (neg / q_safe - pos / p_safe) / n_cls * g;
        const auto d_smooth = torch::where(diff.abs() < 1, diff, diff.sign());
        const auto d_deltas = d_smooth * pos.unsqueeze(1) * (lambda / n_reg) * g;
        return {d_probs, d_deltas, torch::Tensor(), torch::Tensor(), torch::Tensor(), torch::Tensor(),
                torch::Tensor()};
    }
};

void check_terms(const BandDetectionTerms& t)
{
    if (t.probs.dim() != 1 || t.labels.dim() != 1 || t.probs.size(0) != t.labels.size(0))
        throw std::invalid_argument("probs and labels must be [N]");
    if (t.deltas.dim() != 2 || t.deltas.size(1) != 4 || t.deltas.size(0) != t.probs.size(0) ||
        !t.targets.sizes().equals(t.deltas.sizes()))
        throw std::invalid_argument("deltas and targets must be [N, 4]");
    if (!(t.n_cls > 0) || !(t.n_reg > 0)) throw std::invalid_argument("normalisers must be positive");
}

}  // namespace

torch::Tensor band_detection_loss(const BandDetectionTerms& t, double lambda)
{
    check_terms(t);
    return DetectionLossFn::apply(t.probs, t.deltas, t.labels.to(t.probs.device()), t.targets.to(t.deltas.dtype()),
                                  t.n_cls, t.n_reg, lambda);
}

torch::Tensor detection_loss(const DetectionBatch& batch)
{
    if (batch.bands.empty()) throw std::invalid_argument("detection batch has no bands");
    auto total = band_detection_loss(batch.bands[0], batch.lambda);
    for (std::size_t b = 1; b < batch.bands.size(); ++b) total = total + band_detection_loss(batch.bands[b], batch.lambda);
    return total;
}

}  // namespace mlmt::detect
