#pragma once

#include <string>

#include "mlmt/label/store.hpp"

namespace httplib {
class Server;
}

namespace mlmt::label {

/// Registers the annotation API on `server`:
///   GET  /api/samples
///   GET  /api/samples/{id}/context?before=3&after=3
///   GET  /api/images/{id}/{band}.png[?stretch=low,high]
///   PUT  /api/annotations/{id}/{band}   {"boxes": [...], "expected_version": n, "author": "..."}
///   POST /api/export                    {"name": "..."}  (written under export_root)
void register_routes(httplib::Server& server, AnnotationStore& store, const std::filesystem::path& export_root);

/// Blocks until the server stops.
void serve(AnnotationStore& store, const std::filesystem::path& export_root, const std::string& host, int port);

}  // namespace mlmt::label
