#include "mlmt/label/store.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <numeric>

#include "mlmt/core/image_io.hpp"

namespace mlmt::label {

namespace fs = std::filesystem;
using core::BoundingBox;
using core::DataError;
using json = nlohmann::json;

VersionConflict::VersionConflict(long expected, long current)
    : std::runtime_error("version conflict: expected " + std::to_string(expected) + ", stored " +
                         std::to_string(current)),
      current_(current)
{
}

json boxes_json(const std::vector<BoundingBox>& boxes)
{
    json out = json::array();
    for (const auto& b : boxes) {
        json j{{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}, {"class_id", b.class_id}};
        if (b.score) j["score"] = *b.score;
        out.push_back(j);
    }
    return out;
}

std::vector<BoundingBox> boxes_from_json(const json& j)
{
    if (!j.is_array()) throw DataError("boxes must be an array");
    std::vector<BoundingBox> out;
    for (const auto& e : j) {
        if (!e.is_object()) throw DataError("box must be an object");
        BoundingBox b;
        try {
            b.x = e.at("x").get<int>();
            b.y = e.at("y").get<int>();
            b.w = e.at("w").get<int>();
            b.h = e.at("h").get<int>();
            b.class_id = e.value("class_id", 0);
            if (e.contains("score") && !e["score"].is_null()) b.score = e["score"].get<double>();
        } catch (const json::exception& ex) {
            throw DataError(std::string("malformed box: ") + ex.what());
        }
        if (!b.valid()) throw DataError("box extents must be positive");
        out.push_back(b);
    }
    return out;
}

json record_json(const AnnotationRecord& r)
{
    return json{{"sample_id", r.sample_id}, {"band", r.band},       {"boxes", boxes_json(r.boxes)},
                {"version", r.version},     {"author", r.author}, {"timestamp", r.timestamp}};
}

namespace {

std::string utc_now()
{
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                  tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

/// Keeps file names inside their directory whatever the id.
std::string safe_name(const std::string& id)
{
    std::string out;
    for (unsigned char c : id) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.') out += static_cast<char>(c);
        else {
            char buf[4];
            std::snprintf(buf, sizeof buf, "%%%02X", c);
            out += buf;
        }
    }
    if (out.empty() || out == "." || out == "..") out = "%" + out;
    return out;
}

std::string log_name(const std::string& sample_id)
{
    return safe_name(sample_id) + ".jsonl";
}

}  // namespace

AnnotationStore::AnnotationStore(core::DatasetManifest manifest, fs::path log_dir, BandLinks links)
    : manifest_(std::move(manifest)), log_dir_(std::move(log_dir))
{
    const auto names = manifest_.band_names();
    std::map<std::string, std::string> parent;
    for (const auto& n : names) parent[n] = n;
    std::function<std::string(const std::string&)> find = [&](const std::string& n) {
        return parent[n] == n ? n : parent[n] = find(parent[n]);
    };
    for (const auto& [a, b] : links) {
        if (!parent.count(a)) throw DataError("linked band not in dataset", {}, a);
        if (!parent.count(b)) throw DataError("linked band not in dataset", {}, b);
        const auto ra = find(a);
        const auto rb = find(b);
        if (ra != rb) parent[rb] = ra;
    }
    for (const auto& n : names) group_of_[n] = find(n);

    fs::create_directories(log_dir_);
    std::vector<std::size_t> idx(manifest_.samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return manifest_.samples[a].timestamp < manifest_.samples[b].timestamp;
    });
    for (auto i : idx) {
        const auto& rec = manifest_.samples[i];
        if (samples_.count(rec.id)) throw DataError("duplicate sample id", rec.id);
        SampleState s;
        s.manifest_index = i;
        for (const auto& [band, files] : rec.bands) {
            AnnotationRecord r;
            r.sample_id = rec.id;
            r.band = band;
            r.boxes = core::read_boxes_csv(manifest_.resolve(files.boxes));
            s.bands[band] = std::move(r);
        }
        const auto first = core::read_raster_png(manifest_.resolve(rec.bands.begin()->second.image));
        s.height = first.height();
        s.width = first.width();
        const auto log = log_dir_ / log_name(rec.id);
        if (fs::exists(log)) replay(s, log);
        order_.push_back(rec.id);
        samples_.emplace(rec.id, std::move(s));
    }
}

void AnnotationStore::replay(SampleState& s, const fs::path& log)
{
    std::ifstream in(log);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception&) {
            throw DataError(log.string() + ":" + std::to_string(lineno) + ": malformed log line");
        }
        const auto band = j.at("band").get<std::string>();
        auto it = s.bands.find(band);
        if (it == s.bands.end()) throw DataError("log names an unknown band", log.stem().string(), band);
        auto& r = it->second;
        r.boxes = boxes_from_json(j.at("boxes"));
        r.version = j.at("version").get<long>();
        r.author = j.value("author", "");
        r.timestamp = j.value("timestamp", "");
        s.touched = true;
    }
}

const AnnotationStore::SampleState& AnnotationStore::state(const std::string& sample_id) const
{
    auto it = samples_.find(sample_id);
    if (it == samples_.end()) throw NotFound("unknown sample '" + sample_id + "'");
    return it->second;
}

void AnnotationStore::check_band(const std::string& band) const
{
    if (!group_of_.count(band)) throw NotFound("unknown band '" + band + "'");
}

std::vector<std::string> AnnotationStore::sample_ids() const
{
    return order_;
}

std::vector<std::string> AnnotationStore::context(const std::string& sample_id, int before, int after) const
{
    if (before < 0 || after < 0) throw DataError("context sizes must be non-negative");
    state(sample_id);
    const auto pos = static_cast<long>(std::find(order_.begin(), order_.end(), sample_id) - order_.begin());
    const long lo = std::max(0L, pos - before);
    const long hi = std::min(static_cast<long>(order_.size()) - 1, pos + after);
    return {order_.begin() + lo, order_.begin() + hi + 1};
}

AnnotationRecord AnnotationStore::record(const std::string& sample_id, const std::string& band) const
{
    std::shared_lock lock(mutex_);
    check_band(band);
    return state(sample_id).bands.at(band);
}

std::map<std::string, AnnotationRecord> AnnotationStore::records(const std::string& sample_id) const
{
    std::shared_lock lock(mutex_);
    return state(sample_id).bands;
}

std::vector<std::string> AnnotationStore::linked_bands(const std::string& band) const
{
    check_band(band);
    std::vector<std::string> out;
    for (const auto& n : manifest_.band_names())
        if (group_of_.at(n) == group_of_.at(band)) out.push_back(n);
    return out;
}

std::vector<AnnotationRecord> AnnotationStore::put(const std::string& sample_id, const std::string& band,
                                                   std::vector<BoundingBox> boxes, long expected_version,
                                                   const std::string& author)
{
    std::unique_lock lock(mutex_);
    check_band(band);
    state(sample_id);
    auto& s = samples_.at(sample_id);
    for (const auto& b : boxes)
        if (!b.valid() || !b.within(s.width, s.height)) throw DataError("box outside the image", sample_id, band);
    const long current = s.bands.at(band).version;
    if (expected_version != current) throw VersionConflict(expected_version, current);

    const auto stamp = utc_now();
    std::vector<AnnotationRecord> written;
    for (const auto& b : linked_bands(band)) {
        AnnotationRecord r = s.bands.at(b);
        r.boxes = boxes;
        r.version += 1;
        r.author = author;
        r.timestamp = stamp;
        written.push_back(std::move(r));
    }
    // Log first: a crash between the two steps loses nothing that was acknowledged.
    {
        std::ofstream log(log_dir_ / log_name(sample_id), std::ios::app);
        for (const auto& r : written) log << record_json(r).dump() << "\n";
        log.flush();
        if (!log) throw std::runtime_error("cannot append to annotation log");
    }
    for (const auto& r : written) s.bands[r.band] = r;
    s.touched = true;
    return written;
}

core::DatasetManifest AnnotationStore::export_manifest(const fs::path& dir) const
{
    std::shared_lock lock(mutex_);
    core::DatasetManifest out;
    out.root = fs::absolute(dir);
    out.bands = manifest_.bands;
    out.classes = manifest_.classes;
    out.split = manifest_.split;
    fs::create_directories(out.root);
    for (const auto& id : order_) {
        const auto& s = samples_.at(id);
        if (!s.touched) continue;
        const auto& src = manifest_.samples[s.manifest_index];
        core::SampleRecord rec;
        rec.id = id;
        rec.timestamp = src.timestamp;
        const auto sample_dir = out.root / safe_name(id);
        fs::create_directories(sample_dir);
        for (const auto& [band, files] : src.bands) {
            core::BandFiles f;
            f.image = fs::absolute(manifest_.resolve(files.image));
            f.boxes = fs::relative(sample_dir / (safe_name(band) + ".boxes.csv"), out.root);
            core::write_boxes_csv(s.bands.at(band).boxes, out.root / f.boxes);
            rec.bands[band] = f;
        }
        out.samples.push_back(std::move(rec));
    }
    core::write_manifest(out);
    return out;
}

core::Raster AnnotationStore::image(const std::string& sample_id, const std::string& band) const
{
    check_band(band);
    const auto& rec = manifest_.samples[state(sample_id).manifest_index];
    return core::read_raster_png(manifest_.resolve(rec.bands.at(band).image));
}

}  // namespace mlmt::label
