#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mlmt/core/types.hpp"

namespace mlmt::core {

/// What went wrong while reading a manifest.
enum class ManifestErrorKind { missing_file, schema, band_mismatch };

class ManifestError : public DataError {
public:
    ManifestError(ManifestErrorKind kind, const std::string& what, std::string sample_id = {},
                  std::string band = {});
    ManifestErrorKind kind() const { return kind_; }

private:
    ManifestErrorKind kind_;
};

struct BandFiles {
    std::filesystem::path image;
    std::filesystem::path boxes;
    std::optional<std::filesystem::path> mask;

    bool operator==(const BandFiles&) const = default;
};

struct SampleRecord {
    std::string id;
    Timestamp timestamp;
    std::map<std::string, BandFiles> bands;

    bool operator==(const SampleRecord&) const = default;
};

/// On-disk dataset description (`dataset.json`). Paths are kept exactly as
/// written; relative ones are resolved against `root`.
struct DatasetManifest {
    std::filesystem::path root;
    std::vector<BandId> bands;
    std::vector<std::string> classes;
    std::vector<SampleRecord> samples;
    std::string split;

    std::filesystem::path resolve(const std::filesystem::path& p) const;
    std::vector<std::string> band_names() const;
    const SampleRecord* find(const std::string& sample_id) const;

    /// Same bands/classes/root, subset of samples.
    DatasetManifest with_samples(std::vector<SampleRecord> subset, std::string split_tag) const;
};

inline constexpr const char* kManifestFileName = "dataset.json";

/// Accepts either the JSON file or the directory holding `dataset.json`.
/// Validates everything that can be checked without decoding rasters:
/// schema, band sets, referenced files and box syntax.
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Writes `dataset.json` under `manifest.root`. Returns the file path.
std::filesystem::path write_manifest(const DatasetManifest& manifest);

std::string manifest_to_json(const DatasetManifest& manifest);

/// Decodes one sample (rasters, boxes, masks) and checks its invariants.
MultiLayerSample load_sample(const DatasetManifest& manifest, std::size_t index);
std::vector<MultiLayerSample> load_all_samples(const DatasetManifest& manifest);

/// Writes rasters, boxes and masks of every sample under `dir` using the
/// layout `<sample>/<band>.png`, `<sample>/<band>.boxes.csv`,
/// `<sample>/<band>.mask.png`, then writes the manifest.
DatasetManifest write_dataset(const std::vector<MultiLayerSample>& samples, const std::vector<BandId>& bands,
                              const std::vector<std::string>& classes, const std::filesystem::path& dir,
                              const std::string& split = {});

}  // namespace mlmt::core
