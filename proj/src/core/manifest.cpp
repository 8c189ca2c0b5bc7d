#include "mlmt/core/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mlmt/core/image_io.hpp"

namespace mlmt::core {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

ManifestError::ManifestError(ManifestErrorKind kind, const std::string& what, std::string sample_id,
                             std::string band)
    : DataError(what, std::move(sample_id), std::move(band)), kind_(kind)
{
}

fs::path DatasetManifest::resolve(const fs::path& p) const
{
    return p.is_absolute() ? p : root / p;
}

std::vector<std::string> DatasetManifest::band_names() const
{
    std::vector<std::string> names;
    for (const auto& b : bands) names.push_back(b.name);
    return names;
}

const SampleRecord* DatasetManifest::find(const std::string& sample_id) const
{
    for (const auto& s : samples)
        if (s.id == sample_id) return &s;
    return nullptr;
}

DatasetManifest DatasetManifest::with_samples(std::vector<SampleRecord> subset, std::string split_tag) const
{
    DatasetManifest out = *this;
    out.samples = std::move(subset);
    out.split = std::move(split_tag);
    return out;
}

namespace {

[[noreturn]] void schema_error(const std::string& what, const std::string& sample = {}, const std::string& band = {})
{
    throw ManifestError(ManifestErrorKind::schema, what, sample, band);
}

void require_file(const DatasetManifest& m, const fs::path& p, const std::string& sample, const std::string& band)
{
    const auto full = m.resolve(p);
    if (!fs::exists(full)) throw ManifestError(ManifestErrorKind::missing_file, "missing file: " + full.string(), sample, band);
}

Timestamp parse_timestamp(const ojson& j, const std::string& sample)
{
    if (j.is_number_integer()) return Timestamp{j.get<std::int64_t>()};
    if (j.is_string()) return Timestamp{j.get<std::string>()};
    schema_error("timestamp must be an integer tick or an ISO-8601 string", sample);
}

ojson timestamp_json(const Timestamp& t)
{
    if (const auto* tick = std::get_if<std::int64_t>(&t.value)) return *tick;
    return std::get<std::string>(t.value);
}

std::string path_string(const fs::path& p)
{
    return p.generic_string();
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path)
{
    fs::path file = path;
    if (fs::is_directory(file)) file /= kManifestFileName;
    if (!fs::exists(file)) throw ManifestError(ManifestErrorKind::missing_file, "missing file: " + file.string());

    ojson doc;
    try {
        std::ifstream in(file);
        doc = ojson::parse(in);
    } catch (const nlohmann::json::exception& e) {
        schema_error(std::string("manifest is not valid JSON: ") + e.what());
    }

    DatasetManifest m;
    m.root = file.parent_path();
    if (m.root.empty()) m.root = ".";

    try {
        if (!doc.is_object()) schema_error("manifest root must be an object");
        if (!doc.contains("bands") || !doc["bands"].is_array()) schema_error("manifest needs a 'bands' array");
        for (const auto& b : doc["bands"]) {
            if (!b.contains("name") || !b["name"].is_string()) schema_error("band entry needs a string 'name'");
            BandId id{b["name"].get<std::string>(), b.value("layer_index", 0)};
            m.bands.push_back(id);
        }
        try {
            validate_bands(m.bands);
        } catch (const DataError& e) {
            schema_error(e.what(), {}, e.band());
        }
        if (doc.contains("classes")) {
            if (!doc["classes"].is_array()) schema_error("'classes' must be an array");
            for (const auto& c : doc["classes"]) m.classes.push_back(c.get<std::string>());
        }
        m.split = doc.value("split", std::string{});
        if (!doc.contains("samples") || !doc["samples"].is_array()) schema_error("manifest needs a 'samples' array");

        const auto names = m.band_names();
        const std::set<std::string> declared(names.begin(), names.end());
        std::set<std::string> ids;
        for (const auto& s : doc["samples"]) {
            SampleRecord rec;
            if (!s.contains("id") || !s["id"].is_string()) schema_error("sample needs a string 'id'");
            rec.id = s["id"].get<std::string>();
            if (!ids.insert(rec.id).second) schema_error("duplicate sample id", rec.id);
            rec.timestamp = s.contains("timestamp") ? parse_timestamp(s["timestamp"], rec.id) : Timestamp{};
            if (!s.contains("bands") || !s["bands"].is_object()) schema_error("sample needs a 'bands' object", rec.id);

            for (const auto& name : declared)
                if (!s["bands"].contains(name))
                    throw ManifestError(ManifestErrorKind::band_mismatch, "sample lacks declared band", rec.id, name);
            for (const auto& [name, entry] : s["bands"].items()) {
                if (!declared.count(name))
                    throw ManifestError(ManifestErrorKind::band_mismatch, "sample has undeclared band", rec.id, name);
                if (!entry.contains("image") || !entry["image"].is_string())
                    schema_error("band entry needs an 'image' path", rec.id, name);
                if (!entry.contains("boxes") || !entry["boxes"].is_string())
                    schema_error("band entry needs a 'boxes' path", rec.id, name);
                BandFiles files;
                files.image = entry["image"].get<std::string>();
                files.boxes = entry["boxes"].get<std::string>();
                if (entry.contains("mask") && !entry["mask"].is_null()) files.mask = entry["mask"].get<std::string>();
                require_file(m, files.image, rec.id, name);
                require_file(m, files.boxes, rec.id, name);
                if (files.mask) require_file(m, *files.mask, rec.id, name);
                try {
                    (void)read_boxes_csv(m.resolve(files.boxes));
                } catch (const DataError& e) {
                    schema_error(e.what(), rec.id, name);
                }
                rec.bands.emplace(name, std::move(files));
            }
            m.samples.push_back(std::move(rec));
        }
    } catch (const nlohmann::json::exception& e) {
        schema_error(std::string("manifest schema violation: ") + e.what());
    }
    return m;
}

std::string manifest_to_json(const DatasetManifest& m)
{
    ojson doc;
    doc["bands"] = ojson::array();
    for (const auto& b : m.bands) doc["bands"].push_back({{"name", b.name}, {"layer_index", b.layer_index}});
    doc["classes"] = m.classes;
    if (!m.split.empty()) doc["split"] = m.split;
    doc["samples"] = ojson::array();
    for (const auto& s : m.samples) {
        ojson js;
        js["id"] = s.id;
        js["timestamp"] = timestamp_json(s.timestamp);
        js["bands"] = ojson::object();
        // Keep declared band order rather than map order.
        for (const auto& b : m.bands) {
            auto it = s.bands.find(b.name);
            if (it == s.bands.end()) continue;
            ojson entry;
            entry["image"] = path_string(it->second.image);
            entry["boxes"] = path_string(it->second.boxes);
            if (it->second.mask) entry["mask"] = path_string(*it->second.mask);
            js["bands"][b.name] = entry;
        }
        doc["samples"].push_back(std::move(js));
    }
    return doc.dump(2) + "\n";
}

fs::path write_manifest(const DatasetManifest& m)
{
    fs::create_directories(m.root);
    const auto file = m.root / kManifestFileName;
    std::ofstream out(file, std::ios::binary);
    if (!out) throw DataError("cannot write manifest: " + file.string());
    out << manifest_to_json(m);
    return file;
}

MultiLayerSample load_sample(const DatasetManifest& m, std::size_t index)
{
    const auto& rec = m.samples.at(index);
    MultiLayerSample s;
    s.sample_id = rec.id;
    s.timestamp = rec.timestamp;
    s.bands = m.bands;
    for (const auto& band : m.bands) {
        const auto& files = rec.bands.at(band.name);
        s.images[band.name] = read_raster_png(m.resolve(files.image));
        s.detections[band.name] = read_boxes_csv(m.resolve(files.boxes));
        if (files.mask) s.masks[band.name] = read_mask_png(m.resolve(*files.mask), m.classes);
    }
    s.validate();
    return s;
}

std::vector<MultiLayerSample> load_all_samples(const DatasetManifest& m)
{
    std::vector<MultiLayerSample> out;
    out.reserve(m.samples.size());
    for (std::size_t i = 0; i < m.samples.size(); ++i) out.push_back(load_sample(m, i));
    return out;
}

DatasetManifest write_dataset(const std::vector<MultiLayerSample>& samples, const std::vector<BandId>& bands,
                              const std::vector<std::string>& classes, const fs::path& dir, const std::string& split)
{
    validate_bands(bands);
    DatasetManifest m;
    m.root = dir;
    m.bands = bands;
    m.classes = classes;
    m.split = split;
    fs::create_directories(dir);
    for (const auto& s : samples) {
        s.validate();
        SampleRecord rec;
        rec.id = s.sample_id;
        rec.timestamp = s.timestamp;
        const fs::path sample_dir = s.sample_id;
        fs::create_directories(dir / sample_dir);
        for (const auto& band : bands) {
            auto img = s.images.find(band.name);
            if (img == s.images.end()) throw DataError("sample lacks declared band", s.sample_id, band.name);
            BandFiles files;
            files.image = sample_dir / (band.name + ".png");
            files.boxes = sample_dir / (band.name + ".boxes.csv");
            write_raster_png(img->second, dir / files.image);
            auto boxes = s.detections.find(band.name);
            write_boxes_csv(boxes == s.detections.end() ? std::vector<BoundingBox>{} : boxes->second, dir / files.boxes);
            if (auto mk = s.masks.find(band.name); mk != s.masks.end()) {
                files.mask = sample_dir / (band.name + ".mask.png");
                write_mask_png(mk->second, dir / *files.mask);
            }
            rec.bands.emplace(band.name, std::move(files));
        }
        m.samples.push_back(std::move(rec));
    }
    write_manifest(m);
    return m;
}

}  // namespace mlmt::core
