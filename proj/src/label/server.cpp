#include "mlmt/label/server.hpp"

#include <regex>

#include <httplib.h>

#include "mlmt/core/image_io.hpp"

namespace mlmt::label {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body)
{
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message, std::optional<long> version = {})
{
    json body{{"error", message}};
    if (version) body["version"] = *version;
    send_json(res, status, body);
}

int int_param(const httplib::Request& req, const std::string& key, int fallback)
{
    if (!req.has_param(key)) return fallback;
    const auto v = req.get_param_value(key);
    std::size_t used = 0;
    int out = 0;
    try {
        out = std::stoi(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size() || out < 0) throw core::DataError("query parameter '" + key + "' must be a non-negative integer");
    return out;
}

json sample_json(const AnnotationStore& store, const std::string& id)
{
    const auto& rec = *store.manifest().find(id);
    json bands = json::object();
    for (const auto& [band, r] : store.records(id)) {
        json b = record_json(r);
        b.erase("sample_id");
        b.erase("band");
        b["image"] = "/api/images/" + httplib::detail::encode_url(id) + "/" + httplib::detail::encode_url(band) + ".png";
        b["linked_bands"] = store.linked_bands(band);
        bands[band] = b;
    }
    return json{{"id", id}, {"timestamp", rec.timestamp.to_string()}, {"bands", bands}};
}

/// Runs a handler, mapping store exceptions onto status codes.
template <class F>
void guarded(httplib::Response& res, F&& f)
{
    try {
        f();
    } catch (const NotFound& e) {
        send_error(res, 404, e.what());
    } catch (const VersionConflict& e) {
        send_error(res, 409, e.what(), e.current());
    } catch (const core::DataError& e) {
        send_error(res, 400, e.what());
    } catch (const json::exception& e) {
        send_error(res, 400, std::string("malformed JSON: ") + e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, e.what());
    }
}

}  // namespace

void register_routes(httplib::Server& server, AnnotationStore& store, const fs::path& export_root)
{
    server.Get("/api/samples", [&store](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] {
            json list = json::array();
            for (const auto& id : store.sample_ids()) list.push_back(sample_json(store, id));
            send_json(res, 200, json{{"bands", store.manifest().band_names()}, {"samples", list}});
        });
    });

    server.Get(R"(/api/samples/([^/]+)/context)", [&store](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto id = req.matches[1].str();
            const auto ids = store.context(id, int_param(req, "before", 3), int_param(req, "after", 3));
            json list = json::array();
            for (const auto& s : ids) list.push_back(sample_json(store, s));
            send_json(res, 200, json{{"target", id}, {"samples", list}});
        });
    });

    server.Get(R"(/api/images/([^/]+)/([^/]+)\.png)", [&store](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto id = req.matches[1].str();
            const auto band = req.matches[2].str();
            const auto r = store.record(id, band);
            double lo = 0;
            double hi = 100;
            if (req.has_param("stretch")) {
                const auto v = req.get_param_value("stretch");
                static const std::regex pair(R"(^\s*([0-9.]+)\s*,\s*([0-9.]+)\s*$)");
                std::smatch m;
                if (v == "1" || v == "true") {
                    lo = 1;
                    hi = 99;
                } else if (std::regex_match(v, m, pair)) {
                    lo = std::stod(m[1]);
                    hi = std::stod(m[2]);
                } else if (v != "0" && v != "false") {
                    throw core::DataError("stretch must be 'low,high' percentiles or a boolean");
                }
                if (!(lo >= 0 && lo < hi && hi <= 100)) throw core::DataError("stretch percentiles must satisfy 0 <= low < high <= 100");
            }
            const auto png = core::encode_display_png(store.image(id, band), lo, hi);
            res.set_header("X-Record-Version", std::to_string(r.version));
            res.set_content(std::string(png.begin(), png.end()), "image/png");
        });
    });

    server.Put(R"(/api/annotations/([^/]+)/([^/]+))", [&store](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto body = json::parse(req.body);
            if (!body.is_object() || !body.contains("boxes") || !body.contains("expected_version"))
                throw core::DataError("body needs 'boxes' and 'expected_version'");
            const auto written = store.put(req.matches[1].str(), req.matches[2].str(), boxes_from_json(body["boxes"]),
                                           body["expected_version"].get<long>(), body.value("author", ""));
            json linked = json::array();
            for (const auto& r : written) linked.push_back(record_json(r));
            json out = record_json(written.front());
            for (const auto& r : written)
                if (r.band == req.matches[2].str()) out = record_json(r);
            out["written"] = linked;
            send_json(res, 200, out);
        });
    });

    server.Post("/api/export", [&store, export_root](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            std::string name = "export";
            std::string format = "manifest";
            if (!req.body.empty()) {
                const auto body = json::parse(req.body);
                name = body.value("name", name);
                format = body.value("format", format);
            }
            static const std::regex safe(R"(^[A-Za-z0-9_-]{1,64}$)");
            if (!std::regex_match(name, safe)) throw core::DataError("export name must match [A-Za-z0-9_-]{1,64}");
            if (format != "manifest") throw core::DataError("unsupported export format '" + format + "'");
            const auto m = store.export_manifest(export_root / name);
            json versions = json::object();
            for (const auto& s : m.samples) {
                json v = json::object();
                for (const auto& [band, r] : store.records(s.id)) v[band] = r.version;
                versions[s.id] = v;
            }
            send_json(res, 200,
                      json{{"path", (m.root / core::kManifestFileName).string()},
                           {"samples", m.samples.size()},
                           {"versions", versions}});
        });
    });
}

void serve(AnnotationStore& store, const fs::path& export_root, const std::string& host, int port)
{
    httplib::Server server;
    register_routes(server, store, export_root);
    if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace mlmt::label
