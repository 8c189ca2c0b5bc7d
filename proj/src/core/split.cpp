#include "mlmt/core/split.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace mlmt::core {

DatasetSplit split_dataset(const DatasetManifest& manifest, const SplitFractions& f, std::uint64_t seed)
{
    if (f.train < 0 || f.val < 0 || f.test < 0) throw DataError("split fractions must be non-negative");
    if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9) throw DataError("split fractions must sum to 1");

    const std::size_t n = manifest.samples.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    auto n_train = std::min(n, static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n))));
    auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(f.val * static_cast<double>(n))));
    // Rounding remainder goes to the last split that asked for samples.
    if (f.test == 0) {
        if (f.val > 0) n_val = n - n_train;
        else n_train = n;
    }
    const auto n_test = n - n_train - n_val;

    auto check = [](double fraction, std::size_t count, const char* name) {
        if (fraction > 0 && count == 0)
            throw DataError(std::string("dataset too small: ") + name + " split would be empty");
    };
    check(f.train, n_train, "train");
    check(f.val, n_val, "val");
    check(f.test, n_test, "test");

    auto take = [&](std::size_t begin, std::size_t count) {
        std::vector<SampleRecord> subset;
        for (std::size_t i = begin; i < begin + count; ++i) subset.push_back(manifest.samples[order[i]]);
        return subset;
    };
    return DatasetSplit{manifest.with_samples(take(0, n_train), "train"),
                        manifest.with_samples(take(n_train, n_val), "val"),
                        manifest.with_samples(take(n_train + n_val, n_test), "test")};
}

}  // namespace mlmt::core
