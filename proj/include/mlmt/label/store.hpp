#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mlmt/core/manifest.hpp"

namespace mlmt::label {

struct AnnotationRecord {
    std::string sample_id;
    std::string band;
    std::vector<core::BoundingBox> boxes;
    long version = 0;
    std::string author;
    std::string timestamp;  // ISO-8601 UTC of the accepted write; empty for version 0
};

nlohmann::json record_json(const AnnotationRecord& r);
nlohmann::json boxes_json(const std::vector<core::BoundingBox>& boxes);
/// Throws core::DataError on malformed entries or non-positive extents.
std::vector<core::BoundingBox> boxes_from_json(const nlohmann::json& j);

class NotFound : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Stale expected_version. `current` is the stored version.
class VersionConflict : public std::runtime_error {
public:
    VersionConflict(long expected, long current);
    long current() const { return current_; }

private:
    long current_;
};

/// Bands that share one box list, e.g. an EUV band and its magnetogram.
/// Links are transitive.
using BandLinks = std::vector<std::pair<std::string, std::string>>;

/// Box annotations over a dataset. Version 0 of every band holds the boxes
/// from the dataset; each accepted write is appended to
/// `<log_dir>/<sample>.jsonl` and replayed on the next start.
class AnnotationStore {
public:
    AnnotationStore(core::DatasetManifest manifest, std::filesystem::path log_dir, BandLinks links = {});

    const core::DatasetManifest& manifest() const { return manifest_; }

    /// Sample ids in timestamp order.
    std::vector<std::string> sample_ids() const;

    /// Target plus up to `before` earlier and `after` later samples, in
    /// timestamp order. Throws NotFound.
    std::vector<std::string> context(const std::string& sample_id, int before, int after) const;

    AnnotationRecord record(const std::string& sample_id, const std::string& band) const;
    std::map<std::string, AnnotationRecord> records(const std::string& sample_id) const;

    /// Bands sharing boxes with `band` (itself included), in dataset order.
    std::vector<std::string> linked_bands(const std::string& band) const;

    /// Accepted iff `expected_version` equals the stored version of `band`.
    /// The boxes then go to every linked band, each bumping its version.
    /// Returns the new records of all written bands. Throws NotFound,
    /// VersionConflict, or core::DataError for boxes outside the frame.
    std::vector<AnnotationRecord> put(const std::string& sample_id, const std::string& band,
                                      std::vector<core::BoundingBox> boxes, long expected_version,
                                      const std::string& author);

    /// Writes a dataset manifest with every sample that received at least
    /// one write. Images reference the source files; boxes are written
    /// under `dir`. Returns the manifest as written.
    core::DatasetManifest export_manifest(const std::filesystem::path& dir) const;

    /// Raster of one band; throws NotFound.
    core::Raster image(const std::string& sample_id, const std::string& band) const;

private:
    struct SampleState {
        std::size_t manifest_index = 0;
        std::map<std::string, AnnotationRecord> bands;
        int height = 0;
        int width = 0;
        bool touched = false;
    };

    const SampleState& state(const std::string& sample_id) const;
    void check_band(const std::string& band) const;
    void replay(SampleState& s, const std::filesystem::path& log);

    core::DatasetManifest manifest_;
    std::filesystem::path log_dir_;
    std::map<std::string, std::string> group_of_;  // band -> group representative
    std::vector<std::string> order_;               // sample ids by timestamp
    std::map<std::string, SampleState> samples_;
    mutable std::shared_mutex mutex_;
};

}  // namespace mlmt::label
