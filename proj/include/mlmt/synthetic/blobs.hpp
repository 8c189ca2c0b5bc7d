#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mlmt/core/manifest.hpp"
#include "mlmt/synthetic/volume.hpp"

namespace mlmt::synthetic {

/// Toy 3D scene: spheres with a core/shell structure, sliced into bands.
/// Each band sees the classes with its own contrast, so bands carry
/// complementary evidence about the same 3D objects.
struct BlobSceneConfig {
    int depth = 12;
    int height = 64;
    int width = 64;
    int min_blobs = 1;
    int max_blobs = 3;
    double min_radius = 5.0;
    double max_radius = 10.0;
    /// Core radius as a fraction of the outer radius.
    double core_fraction = 0.5;
    /// Radial intensity drop at the sphere surface, relative to the centre.
    double falloff = 0.3;
    /// (shell, core) intensity per band; cycled when shorter than the band list.
    std::vector<std::array<double, 2>> class_contrast{{0.6, 0.9}};
    /// Per-band multiplier; cycled like class_contrast.
    std::vector<double> attenuation{1.0};
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Blob {
    double cx = 0;
    double cy = 0;
    double cz = 0;
    double radius = 0;
};

/// Class names of blob scenes; index 0 is background.
const std::vector<std::string>& blob_classes();

struct BlobScene {
    std::map<std::string, Volume> modalities;
    ClassVolume gt;
};

/// Draws blob geometry for one scene. Centres are placed so each sphere
/// stays inside the frame laterally and straddles the sliced depth range.
std::vector<Blob> sample_blobs(const BlobSceneConfig& cfg, const SliceGapConfig& gap, std::mt19937_64& rng);

/// Rasterises spheres into a class volume (core beats shell beats
/// background) and one intensity volume per band, adding Gaussian noise.
BlobScene render_blob_scene(const BlobSceneConfig& cfg, const SliceGapConfig& gap, const std::vector<Blob>& blobs,
                            std::mt19937_64& rng);

/// Independent RNG stream per (seed, sample index).
std::mt19937_64 sample_rng(std::uint64_t seed, std::size_t index);

core::MultiLayerSample synthesize_blob_sample(const BlobSceneConfig& cfg, const SliceGapConfig& gap,
                                              std::size_t index);

/// Writes `n_samples` scenes under `out_dir` and returns the manifest.
/// Deterministic in cfg.seed.
core::DatasetManifest synthesize_blob_dataset(const BlobSceneConfig& cfg, std::size_t n_samples,
                                              const SliceGapConfig& gap, const std::filesystem::path& out_dir);

}  // namespace mlmt::synthetic
