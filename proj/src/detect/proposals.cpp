#include "mlmt/detect/proposals.hpp"

namespace mlmt::detect {

BandProposals combine_proposals(const BandProposals& per_band, RunMode mode)
{
    if (mode == RunMode::train) return per_band;
    std::vector<Proposal> all;
    for (const auto& [band, list] : per_band) all.insert(all.end(), list.begin(), list.end());
    BandProposals out;
    for (const auto& entry : per_band) out.emplace_back(entry.first, all);
    return out;
}

}  // namespace mlmt::detect
