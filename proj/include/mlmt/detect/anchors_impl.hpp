#pragma once

#include <algorithm>
#include <numeric>

namespace mlmt::detect {

template <class Rng>
int subsample_labels(std::vector<AnchorLabel>& labels, int batch_size, double positive_fraction, Rng& rng)
{
    std::vector<std::size_t> pos;
    std::vector<std::size_t> neg;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == AnchorLabel::positive) pos.push_back(i);
        else if (labels[i] == AnchorLabel::negative) neg.push_back(i);
    }
    const auto max_pos = static_cast<std::size_t>(batch_size * positive_fraction);
    auto trim = [&](std::vector<std::size_t>& idx, std::size_t keep) {
        if (idx.size() <= keep) return;
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t k = keep; k < idx.size(); ++k) labels[idx[k]] = AnchorLabel::ignore;
        idx.resize(keep);
    };
    trim(pos, max_pos);
    trim(neg, static_cast<std::size_t>(batch_size) - pos.size());
    return static_cast<int>(pos.size() + neg.size());
}

}  // namespace mlmt::detect
