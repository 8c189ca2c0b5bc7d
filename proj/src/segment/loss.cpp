#include "mlmt/segment/loss.hpp"

#include <stdexcept>

namespace mlmt::segment {

namespace {

using torch::autograd::AutogradContext;
using torch::autograd::variable_list;

class WeightedCrossEntropyFn : public torch::autograd::Function<WeightedCrossEntropyFn> {
public:
    static torch::Tensor forward(AutogradContext* ctx, torch::Tensor logits, torch::Tensor labels,
                                 torch::Tensor weights)
    {
        const auto probs = torch::softmax(logits, 1);
        const auto idx = labels.unsqueeze(1);
        const auto p_true = probs.gather(1, idx).squeeze(1);
        const auto w = weights.index_select(0, labels.reshape({-1})).view(labels.sizes());
        const auto loss = -(w * p_true.clamp_min(kSegLogEpsilon).log()).sum();
        ctx->save_for_backward({probs, labels, w});
        return loss;
    }

    static variable_list backward(AutogradContext* ctx, variable_list grad_out)
    {
        const auto saved = ctx->get_saved_variables();
        const auto& probs = saved[0];
        const auto& labels = saved[1];
        const auto& w = saved[2];
        const auto onehot = torch::zeros_like(probs).scatter_(1, labels.unsqueeze(1), 1.0);
        const auto grad = (probs - onehot) * w.unsqueeze(1) * grad_out[0];
        return {grad, torch::Tensor(), torch::Tensor()};
    }
};

torch::Tensor weight_tensor(const std::vector<double>& w, const torch::TensorOptions& opts)
{
    if (w.empty()) throw std::invalid_argument("class weights must be non-empty");
    for (double v : w)
        if (!(v > 0)) throw std::invalid_argument("class weights must be positive");
    return torch::tensor(w, torch::TensorOptions().dtype(torch::kFloat64)).to(opts.dtype());
}

void check_pair(const torch::Tensor& scores, const torch::Tensor& labels, std::size_t n_classes)
{
    if (scores.dim() != 4 || labels.dim() != 3 || scores.size(0) != labels.size(0) ||
        scores.size(2) != labels.size(1) || scores.size(3) != labels.size(2))
        throw std::invalid_argument("expected scores [N, C, H, W] and labels [N, H, W]");
    if (static_cast<std::size_t>(scores.size(1)) != n_classes)
        throw std::invalid_argument("class weight count differs from the class dimension");
    if (labels.numel() > 0 && (labels.min().item<int64_t>() < 0 || labels.max().item<int64_t>() >= scores.size(1)))
        throw std::invalid_argument("label outside the class range");
}

}  // namespace

torch::Tensor segmentation_loss(const SegBatch& batch, const std::vector<double>& class_weights)
{
    if (batch.logits.empty() || batch.logits.size() != batch.labels.size())
        throw std::invalid_argument("one label grid per band required");
    torch::Tensor total;
    for (std::size_t b = 0; b < batch.logits.size(); ++b) {
        const auto& z = batch.logits[b];
        const auto y = batch.labels[b].to(torch::kInt64);
        check_pair(z, y, class_weights.size());
        auto term = WeightedCrossEntropyFn::apply(z, y, weight_tensor(class_weights, z.options()));
        total = total.defined() ? total + term : term;
    }
    return total;
}

torch::Tensor segmentation_loss_from_probs(const torch::Tensor& probs, const torch::Tensor& labels,
                                           const std::vector<double>& class_weights)
{
    const auto y = labels.to(torch::kInt64);
    check_pair(probs, y, class_weights.size());
    const auto w = weight_tensor(class_weights, probs.options());
    const auto p_true = probs.gather(1, y.unsqueeze(1)).squeeze(1);
    return -(w.index_select(0, y.reshape({-1})).view(y.sizes()) * p_true.clamp_min(kSegLogEpsilon).log()).sum();
}

std::vector<double> solar_class_weights() { return {2.0, 1.0, 2.0}; }

std::vector<double> uniform_class_weights(std::size_t n) { return std::vector<double>(n, 1.0); }

}  // namespace mlmt::segment
