#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mlmt/detect/anchors.hpp"

namespace mlmt::detect {

struct Proposal {
    BoxF box;
    double objectness = 0;
    std::string source_band;
};

/// Proposal lists keyed by band, in band order.
using BandProposals = std::vector<std::pair<std::string, std::vector<Proposal>>>;

enum class RunMode { train, test };

/// Train: every band keeps its own proposals. Test: every band receives the
/// concatenation of all bands' lists in band order, without deduplication.
BandProposals combine_proposals(const BandProposals& per_band, RunMode mode);

}  // namespace mlmt::detect
