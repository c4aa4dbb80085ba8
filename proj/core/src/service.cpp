#include "stripeid/service.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <charconv>
#include <fstream>
#include <random>
#include <set>
#include <thread>

#include "binary_io.hpp"
#include "stripeid/engine.hpp"
#include "stripeid/report.hpp"

namespace stripeid {
namespace fs = std::filesystem;
using nlohmann::json;

int http_status(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidRoi:
    case ErrorCode::kTooSmall:
      return 422;
    case ErrorCode::kNotFound:
      return 404;
    case ErrorCode::kNoGeneration:
    case ErrorCode::kEmptyPool:
    case ErrorCode::kInsufficientData:
    case ErrorCode::kInsufficientDatabase:
    case ErrorCode::kIncompatible:
      return 409;
    case ErrorCode::kInvalidInput:
    case ErrorCode::kFormat:
    case ErrorCode::kInvalidShape:
      return 400;
    default:
      return 500;
  }
}

namespace {

constexpr const char* kPrefix = R"(/api(?:/v1)?)";

std::string route(const std::string& tail) { return std::string(kPrefix) + tail; }

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
  send_json(res, http_status(code), {{"error", to_string(code)}, {"message", message}});
}

[[noreturn]] void bad_request(const std::string& message) { throw Error(ErrorCode::kInvalidInput, message); }

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) bad_request("request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    bad_request(std::string("malformed JSON: ") + e.what());
  }
}

void reject_unknown(const json& j, std::initializer_list<std::string_view> known) {
  for (const auto& [key, v] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) bad_request("unknown field '" + key + "'");
  }
}

void reject_unknown_parts(const httplib::Request& req, std::initializer_list<std::string_view> known) {
  for (const auto& [key, part] : req.files) {
    if (std::find(known.begin(), known.end(), key) == known.end()) bad_request("unknown form field '" + key + "'");
  }
}

std::optional<Roi> parse_roi(const json& j) {
  if (j.is_null()) return std::nullopt;
  try {
    if (j.is_string()) {
      const std::string s = j.get<std::string>();
      int v[4];
      const char* p = s.data();
      const char* end = s.data() + s.size();
      for (int i = 0; i < 4; ++i) {
        while (p < end && *p == ' ') ++p;
        const auto r = std::from_chars(p, end, v[i]);
        if (r.ec != std::errc{}) bad_request("roi must be \"x,y,w,h\"");
        p = r.ptr;
        while (p < end && *p == ' ') ++p;
        if (i < 3) {
          if (p == end || *p != ',') bad_request("roi must be \"x,y,w,h\"");
          ++p;
        }
      }
      if (p != end) bad_request("roi must be \"x,y,w,h\"");
      return Roi{v[0], v[1], v[2], v[3]};
    }
    if (j.is_object()) {
      reject_unknown(j, {"x", "y", "width", "height"});
      return Roi{j.at("x").get<int>(), j.at("y").get<int>(), j.at("width").get<int>(), j.at("height").get<int>()};
    }
    if (j.is_array() && j.size() == 4) return Roi{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
  } catch (const json::exception& e) {
    bad_request(std::string("malformed roi: ") + e.what());
  }
  bad_request("malformed roi");
}

std::optional<Roi> roi_from_part(const httplib::Request& req) {
  if (!req.has_file("roi")) return std::nullopt;
  const std::string text = req.get_file_value("roi").content;
  if (!text.empty() && (text.front() == '{' || text.front() == '[')) {
    try {
      return parse_roi(json::parse(text));
    } catch (const json::exception& e) {
      bad_request(std::string("malformed roi: ") + e.what());
    }
  }
  return parse_roi(json(text));
}

Roi checked_roi(std::optional<Roi> roi, const GrayImage& image) {
  const Roi r = roi.value_or(Roi{0, 0, image.width(), image.height()});
  if (r.width <= 0 || r.height <= 0 || r.x < 0 || r.y < 0 || r.x + r.width > image.width() ||
      r.y + r.height > image.height()) {
    throw Error(ErrorCode::kInvalidRoi, "roi must be non-empty and inside the " + std::to_string(image.width()) + "x" +
                                            std::to_string(image.height()) + " image");
  }
  return r;
}

json roi_json(const Roi& r) { return {{"x", r.x}, {"y", r.y}, {"width", r.width}, {"height", r.height}}; }

/// Keypoint ellipse in source-image pixels.
json ellipse_json(const EllipseKeypoint& kp, const Roi& roi, const FeatureSet& f) {
  const double sx = static_cast<double>(f.roi_width) / roi.width;
  const double sy = static_cast<double>(f.roi_height) / roi.height;
  return {{"x", roi.x + (kp.x + 0.5) / sx - 0.5},
          {"y", roi.y + (kp.y + 0.5) / sy - 0.5},
          {"a", kp.shape.a / sx},
          {"b", kp.shape.b / sy},
          {"c", kp.shape.c / sy}};
}

json record_json(const ImageRecord& r, const Catalog& catalog) {
  json j = {{"image_id", r.image_id.value},
            {"source_uri", r.source_uri},
            {"roi", roi_json(r.roi)},
            {"ingest_time", r.ingest_time}};
  j["label_id"] = r.label_id ? json(r.label_id->value) : json(nullptr);
  j["label_name"] = nullptr;
  if (r.label_id) {
    if (const auto l = catalog.label(*r.label_id)) j["label_name"] = l->name;
  }
  try {
    j["num_features"] = catalog.features(r.image_id)->size();
  } catch (const Error&) {
    j["num_features"] = nullptr;
  }
  return j;
}

std::string random_token() {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
  return buf;
}

bool is_png(const std::string& bytes) { return bytes.size() >= 8 && bytes.compare(0, 4, "\x89PNG") == 0; }

}  // namespace

struct Service::Impl {
  Catalog& catalog;
  ServiceOptions options;
  httplib::Server server;
  std::thread thread;
  int port = 0;

  Impl(Catalog& c, ServiceOptions o) : catalog(c), options(std::move(o)) {}

  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  Handler guarded(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const Error& e) {
        send_error(res, e.code(), e.what());
      } catch (const json::exception& e) {
        send_error(res, ErrorCode::kInvalidInput, e.what());
      } catch (const std::exception& e) {
        spdlog::error("{} {}: {}", req.method, req.path, e.what());
        send_json(res, 500, {{"error", "internal"}, {"message", e.what()}});
      }
    };
  }

  fs::path uploads() const { return catalog.dir() / "uploads"; }

  /// Keeps the uploaded bytes so the image can be registered later.
  std::string store_upload(const std::string& bytes) {
    fs::create_directories(uploads());
    const std::string id = random_token() + (is_png(bytes) ? ".png" : ".pnm");
    detail::write_file_atomic(uploads() / id,
                              std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
    return id;
  }

  fs::path upload_path(const std::string& id) const {
    if (id.empty() || id.find_first_not_of("0123456789abcdef.pngm") != std::string::npos || id.find("..") != std::string::npos) {
      bad_request("malformed upload_id");
    }
    const fs::path p = uploads() / id;
    if (!fs::exists(p)) throw Error(ErrorCode::kNotFound, "unknown upload_id");
    return p;
  }

  GrayImage decode_part(const httplib::Request& req) {
    if (!req.has_file("image")) bad_request("missing form field 'image'");
    const std::string& bytes = req.get_file_value("image").content;
    return decode_image(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
  }

  void query(const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data()) bad_request("expected multipart/form-data");
    reject_unknown_parts(req, {"image", "roi", "config"});
    const GrayImage image = decode_part(req);
    const Roi roi = checked_roi(roi_from_part(req), image);

    const auto gen = catalog.current();
    if (!gen) throw Error(ErrorCode::kNoGeneration, "no index generation has been built");
    QueryConfig config = options.defaults;
    config.descriptor_variant = gen->info.variant;
    config.backend = gen->info.backend;
    if (req.has_file("config")) {
      const std::string text = req.get_file_value("config").content;
      json overrides;
      try {
        overrides = json::parse(text.empty() ? "{}" : text);
      } catch (const json::exception& e) {
        bad_request(std::string("malformed config: ") + e.what());
      }
      config = query_config_from_json(overrides, config);
    }

    const auto t0 = std::chrono::steady_clock::now();
    const FeatureSet features = extract_features(image, roi, config.descriptor_variant);
    RankedResult result = rank_features(*gen, features, config);
    result.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    json body = to_json(result, gen.get(), 0);
    body.erase("images");
    body["upload_id"] = store_upload(req.get_file_value("image").content);
    body["roi"] = roi_json(roi);
    body["query_features"] = features.size();
    json candidates = json::array();
    for (std::size_t i = 0; i < std::min(options.overlay_candidates, result.images.size()); ++i) {
      const ScoredImage& s = result.images[i];
      json c = {{"image_id", s.image_id.value}, {"score", s.score()}, {"initial_score", s.initial_score}};
      c["reranked_score"] = s.reranked_score ? json(*s.reranked_score) : json(nullptr);
      const auto lit = gen->labels.image_labels.find(s.image_id);
      c["label_id"] = lit != gen->labels.image_labels.end() ? json(lit->second.value) : json(nullptr);
      json hotspots = json::array();
      if (s.inlier_matches) {
        const FeatureSet& db = gen->features_of(s.image_id);
        Roi db_roi{0, 0, db.roi_width, db.roi_height};
        try {
          db_roi = catalog.image(s.image_id).roi;
        } catch (const Error&) {
          // image removed since the build; keep preprocessed coordinates
        }
        for (const MatchTriple& t : s.inlier_matches->triples) {
          hotspots.push_back({{"score", t.score},
                              {"query_index", t.query_index},
                              {"db_index", t.db_index},
                              {"query", ellipse_json(features.keypoints[t.query_index], roi, features)},
                              {"db", ellipse_json(db.keypoints[t.db_index], db_roi, db)}});
        }
      }
      c["hotspots"] = std::move(hotspots);
      candidates.push_back(std::move(c));
    }
    body["candidates"] = std::move(candidates);
    send_json(res, 200, body);
  }

  void register_image(const httplib::Request& req, httplib::Response& res) {
    fs::path file;
    std::optional<Roi> roi;
    std::optional<std::string> label;
    if (req.is_multipart_form_data()) {
      reject_unknown_parts(req, {"image", "roi", "label"});
      const GrayImage image = decode_part(req);
      roi = checked_roi(roi_from_part(req), image);
      if (req.has_file("label")) label = req.get_file_value("label").content;
      file = uploads() / store_upload(req.get_file_value("image").content);
    } else {
      const json j = parse_body(req);
      reject_unknown(j, {"upload_id", "roi", "label"});
      if (!j.contains("upload_id") || !j["upload_id"].is_string()) bad_request("missing 'upload_id'");
      file = upload_path(j["upload_id"].get<std::string>());
      if (j.contains("roi")) roi = parse_roi(j["roi"]);
      if (j.contains("label") && !j["label"].is_null()) label = j["label"].get<std::string>();
      if (roi) checked_roi(roi, load_image(file));
    }
    const ImageRecord rec = catalog.add_image_file(file, roi, label);
    send_json(res, 201, record_json(rec, catalog));
  }

  void assign_label(const httplib::Request& req, httplib::Response& res) {
    const ImageId id{static_cast<std::uint32_t>(std::stoul(req.matches[1].str()))};
    const json j = parse_body(req);
    reject_unknown(j, {"name"});
    if (!j.contains("name") || !j["name"].is_string()) bad_request("missing 'name'");
    catalog.image(id);  // 404 before touching labels
    const ImageRecord rec = catalog.assign_label(id, j["name"].get<std::string>());
    send_json(res, 200, record_json(rec, catalog));
  }

  void rebuild(const httplib::Request& req, httplib::Response& res) {
    const json j = parse_body(req);
    reject_unknown(j, {"backend", "num_trees", "seed", "descriptor_variant"});
    BuildParams p = options.build;
    if (j.contains("backend")) p.backend = parse_backend(j["backend"].get<std::string>());
    if (j.contains("num_trees")) p.num_trees = j["num_trees"].get<int>();
    if (j.contains("seed")) p.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("descriptor_variant")) p.variant = parse_variant(j["descriptor_variant"].get<std::string>());
    const IndexGeneration g = catalog.build_generation(p);
    send_json(res, 200,
              {{"generation", g.generation},
               {"backend", to_string(g.backend)},
               {"descriptor_variant", to_string(g.variant)},
               {"num_trees", g.num_trees},
               {"seed", g.seed},
               {"pool_size", g.fingerprint.count},
               {"fingerprint", std::to_string(g.fingerprint.checksum)}});
  }

  void labels(const httplib::Request&, httplib::Response& res) {
    std::map<LabelId, json> out;
    for (const LabelRecord& l : catalog.labels()) {
      out[l.label_id] = {{"label_id", l.label_id.value}, {"name", l.name}, {"image_ids", json::array()}};
    }
    for (const ImageRecord& r : catalog.images()) {
      if (r.label_id && out.contains(*r.label_id)) out[*r.label_id]["image_ids"].push_back(r.image_id.value);
    }
    json list = json::array();
    for (auto& [id, j] : out) list.push_back(std::move(j));
    send_json(res, 200, {{"labels", list}});
  }

  void images(const httplib::Request&, httplib::Response& res) {
    json list = json::array();
    for (const ImageRecord& r : catalog.images()) list.push_back(record_json(r, catalog));
    send_json(res, 200, {{"images", list}});
  }

  void image(const httplib::Request& req, httplib::Response& res) {
    const ImageId id{static_cast<std::uint32_t>(std::stoul(req.matches[1].str()))};
    send_json(res, 200, record_json(catalog.image(id), catalog));
  }

  void image_file(const httplib::Request& req, httplib::Response& res) {
    const ImageId id{static_cast<std::uint32_t>(std::stoul(req.matches[1].str()))};
    const ImageRecord rec = catalog.image(id);
    fs::path p(rec.source_uri);
    if (p.is_relative()) p = catalog.dir() / p;
    if (!fs::exists(p)) throw Error(ErrorCode::kNotFound, "source file of image " + std::to_string(id.value) + " is gone");
    const auto bytes = detail::read_file(p);
    const std::string body(bytes.begin(), bytes.end());
    res.status = 200;
    res.set_content(body, is_png(body) ? "image/png" : "image/x-portable-anymap");
  }

  void status(const httplib::Request&, httplib::Response& res) {
    const auto gen = catalog.current();
    json j = {{"images", catalog.images().size()}, {"labels", catalog.labels().size()}, {"dirty", catalog.dirty()}};
    j["generation"] = gen ? json(gen->info.generation) : json(nullptr);
    QueryConfig d = options.defaults;
    if (gen) {
      d.descriptor_variant = gen->info.variant;
      d.backend = gen->info.backend;
    }
    j["defaults"] = to_json(d);
    send_json(res, 200, j);
  }

  void install() {
    server.set_payload_max_length(64u << 20);
    auto bind = [this](void (Impl::*fn)(const httplib::Request&, httplib::Response&)) {
      return guarded([this, fn](const httplib::Request& req, httplib::Response& res) { (this->*fn)(req, res); });
    };
    server.Post(route("/query"), bind(&Impl::query));
    server.Post(route("/images"), bind(&Impl::register_image));
    server.Post(route(R"(/images/(\d+)/label)"), bind(&Impl::assign_label));
    server.Post(route("/rebuild"), bind(&Impl::rebuild));
    server.Get(route("/labels"), bind(&Impl::labels));
    server.Get(route("/images"), bind(&Impl::images));
    server.Get(route(R"(/images/(\d+))"), bind(&Impl::image));
    server.Get(route(R"(/images/(\d+)/file)"), bind(&Impl::image_file));
    server.Get(route("/status"), bind(&Impl::status));
    if (options.static_dir) {
      if (!server.set_mount_point("/", options.static_dir->string())) {
        spdlog::warn("static directory {} not found; UI not served", options.static_dir->string());
      }
    }
  }
};

Service::Service(Catalog& catalog, ServiceOptions options)
    : impl_(std::make_unique<Impl>(catalog, std::move(options))) {
  impl_->install();
}

Service::~Service() { stop(); }

int Service::bind() {
  auto& s = impl_->server;
  const int port = impl_->options.port == 0 ? s.bind_to_any_port(impl_->options.host)
                                            : (s.bind_to_port(impl_->options.host, impl_->options.port)
                                                   ? impl_->options.port
                                                   : -1);
  if (port <= 0) {
    throw Error(ErrorCode::kIo, "cannot bind " + impl_->options.host + ":" + std::to_string(impl_->options.port));
  }
  impl_->port = port;
  return port;
}

void Service::run() {
  spdlog::info("serving on http://{}:{}", impl_->options.host, impl_->port);
  impl_->server.listen_after_bind();
}

int Service::start() {
  const int port = bind();
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void Service::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace stripeid
