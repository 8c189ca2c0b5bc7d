#include "mlmt/synthetic/blobs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace mlmt::synthetic {

using core::DataError;

void BlobSceneConfig::validate() const
{
    if (depth < 1 || height < 1 || width < 1) throw DataError("blob volume shape must be positive");
    if (min_blobs < 0 || max_blobs < min_blobs) throw DataError("invalid blob count range");
    if (!(min_radius > 0) || max_radius < min_radius) throw DataError("invalid blob radius range");
    if (2 * max_radius >= std::min(height, width)) throw DataError("blob radius does not fit inside the frame");
    if (core_fraction < 0 || core_fraction > 1) throw DataError("core fraction must lie in [0, 1]");
    if (class_contrast.empty() || attenuation.empty()) throw DataError("contrast and attenuation must be non-empty");
    if (noise_sigma < 0) throw DataError("noise sigma must be non-negative");
}

const std::vector<std::string>& blob_classes()
{
    static const std::vector<std::string> classes{"background", "shell", "core"};
    return classes;
}

std::vector<Blob> sample_blobs(const BlobSceneConfig& cfg, const SliceGapConfig& gap, std::mt19937_64& rng)
{
    cfg.validate();
    gap.validate(cfg.depth);
    std::uniform_int_distribution<int> count(cfg.min_blobs, cfg.max_blobs);
    std::uniform_real_distribution<double> radius(cfg.min_radius, cfg.max_radius);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const double z_first = gap.slice_index(0);
    const double z_last = gap.slice_index(gap.band_order.size() - 1);
    std::vector<Blob> blobs(static_cast<std::size_t>(count(rng)));
    for (auto& b : blobs) {
        b.radius = radius(rng);
        b.cx = b.radius + unit(rng) * (cfg.width - 1 - 2 * b.radius);
        b.cy = b.radius + unit(rng) * (cfg.height - 1 - 2 * b.radius);
        const double lo = std::max(0.0, z_first - b.radius / 2);
        const double hi = std::min(cfg.depth - 1.0, z_last + b.radius / 2);
        b.cz = lo + unit(rng) * (hi - lo);
    }
    return blobs;
}

BlobScene render_blob_scene(const BlobSceneConfig& cfg, const SliceGapConfig& gap, const std::vector<Blob>& blobs,
                            std::mt19937_64& rng)
{
    cfg.validate();
    gap.validate(cfg.depth);
    BlobScene scene;
    scene.gt = ClassVolume(cfg.depth, cfg.height, cfg.width);
    Volume profile(cfg.depth, cfg.height, cfg.width);

    for (const auto& b : blobs) {
        const int z0 = std::max(0, static_cast<int>(std::floor(b.cz - b.radius)));
        const int z1 = std::min(cfg.depth - 1, static_cast<int>(std::ceil(b.cz + b.radius)));
        const int y0 = std::max(0, static_cast<int>(std::floor(b.cy - b.radius)));
        const int y1 = std::min(cfg.height - 1, static_cast<int>(std::ceil(b.cy + b.radius)));
        const int x0 = std::max(0, static_cast<int>(std::floor(b.cx - b.radius)));
        const int x1 = std::min(cfg.width - 1, static_cast<int>(std::ceil(b.cx + b.radius)));
        const double r2 = b.radius * b.radius;
        const double core = b.radius * cfg.core_fraction;
        for (int z = z0; z <= z1; ++z) {
            for (int y = y0; y <= y1; ++y) {
                for (int x = x0; x <= x1; ++x) {
                    const double d2 = (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy) + (z - b.cz) * (z - b.cz);
                    if (d2 > r2) continue;
                    const std::uint8_t cls = d2 <= core * core ? 2 : 1;
                    const auto shade = static_cast<float>(1.0 - cfg.falloff * d2 / r2);
                    auto& label = scene.gt.at(z, y, x);
                    auto& p = profile.at(z, y, x);
                    if (cls > label) {
                        label = cls;
                        p = shade;
                    } else if (cls == label) {
                        p = std::max(p, shade);
                    }
                }
            }
        }
    }

    std::normal_distribution<double> noise(0.0, cfg.noise_sigma > 0 ? cfg.noise_sigma : 1.0);
    for (std::size_t k = 0; k < gap.band_order.size(); ++k) {
        const auto& contrast = cfg.class_contrast[k % cfg.class_contrast.size()];
        const double gain = cfg.attenuation[k % cfg.attenuation.size()];
        Volume vol(cfg.depth, cfg.height, cfg.width);
        for (std::size_t i = 0; i < vol.data.size(); ++i) {
            const auto cls = scene.gt.labels[i];
            double v = cls == 0 ? 0.0 : gain * contrast[cls - 1] * profile.data[i];
            if (cfg.noise_sigma > 0) v += noise(rng);
            vol.data[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
        scene.modalities.emplace(gap.band_order[k], std::move(vol));
    }
    return scene;
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::size_t index)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x6d6c6d74u};
    return std::mt19937_64(seq);
}

core::MultiLayerSample synthesize_blob_sample(const BlobSceneConfig& cfg, const SliceGapConfig& gap, std::size_t index)
{
    auto rng = sample_rng(cfg.seed, index);
    const auto blobs = sample_blobs(cfg, gap, rng);
    const auto scene = render_blob_scene(cfg, gap, blobs, rng);
    char id[32];
    std::snprintf(id, sizeof id, "blob_%05zu", index);
    return build_multilayer_from_volumes(scene.modalities, scene.gt, gap, blob_classes(), id,
                                         core::Timestamp{static_cast<std::int64_t>(index)});
}

core::DatasetManifest synthesize_blob_dataset(const BlobSceneConfig& cfg, std::size_t n_samples,
                                              const SliceGapConfig& gap, const std::filesystem::path& out_dir)
{
    cfg.validate();
    gap.validate(cfg.depth);
    std::vector<core::MultiLayerSample> samples;
    samples.reserve(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) samples.push_back(synthesize_blob_sample(cfg, gap, i));
    std::vector<core::BandId> bands;
    for (std::size_t k = 0; k < gap.band_order.size(); ++k)
        bands.push_back(core::BandId{gap.band_order[k], gap.slice_index(k)});
    return core::write_dataset(samples, bands, blob_classes(), out_dir);
}

}  // namespace mlmt::synthetic
