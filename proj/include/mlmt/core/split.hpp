#pragma once

#include <cstdint>

#include "mlmt/core/manifest.hpp"

namespace mlmt::core {

struct SplitFractions {
    double train = 1.0;
    double val = 0.0;
    double test = 0.0;
};

struct DatasetSplit {
    DatasetManifest train;
    DatasetManifest val;
    DatasetManifest test;
};

/// Seeded shuffle, then train/val take round(fraction * n) samples each and
/// test takes the remainder. Partition is disjoint and exhaustive.
/// Throws DataError when fractions do not sum to 1 or a split with a
/// positive fraction would end up empty.
DatasetSplit split_dataset(const DatasetManifest& manifest, const SplitFractions& fractions, std::uint64_t seed);

}  // namespace mlmt::core
