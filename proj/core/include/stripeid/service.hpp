#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "stripeid/catalog.hpp"
#include "stripeid/config.hpp"
#include "stripeid/error.hpp"

namespace stripeid {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  /// 0 picks a free port.
  int port = 8080;
  /// Static files served under "/" (the built review UI).
  std::optional<std::filesystem::path> static_dir;
  /// Query defaults; descriptor variant and backend follow the generation
  /// unless a request overrides them.
  QueryConfig defaults;
  /// Used by POST /api/v1/rebuild when the request leaves fields out.
  BuildParams build;
  /// Candidates with hot-spot overlays in a query response.
  std::size_t overlay_candidates = 10;
};

/// HTTP status used for a library error.
int http_status(ErrorCode code) noexcept;

/// JSON API under /api/v1 (also reachable as /api):
///   POST /query               multipart: image, roi "x,y,w,h" (optional), config (JSON, optional)
///   POST /images              multipart: image, roi, label; or JSON {upload_id, roi, label}
///   POST /images/{id}/label   {"name": ...}
///   POST /rebuild             {"backend", "num_trees", "seed", "descriptor_variant"} (all optional)
///   GET  /labels, /images, /images/{id}, /images/{id}/file, /status
class Service {
 public:
  Service(Catalog& catalog, ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds the socket; returns the bound port. Throws kIo on failure.
  int bind();
  /// Serves until stop(); call bind() first.
  void run();
  /// bind() plus run() on a background thread.
  int start();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace stripeid
