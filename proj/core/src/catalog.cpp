#include "stripeid/catalog.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <ctime>
#include <set>

#include "binary_io.hpp"
#include "stripeid/error.hpp"

namespace stripeid {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kFormat = "stripeid-catalog";
constexpr int kManifestVersion = 1;

std::string now_utc() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string sidecar_ref(ImageId id) { return "features/" + std::to_string(id.value) + ".hsft"; }
std::string generation_ref(std::uint64_t g) { return "index/" + std::to_string(g); }

json without(const json& object, std::initializer_list<const char*> keys) {
  json out = object.is_object() ? object : json::object();
  for (const char* k : keys) out.erase(k);
  return out;
}

json roi_json(const Roi& r) { return {{"x", r.x}, {"y", r.y}, {"width", r.width}, {"height", r.height}}; }
Roi roi_from(const json& j) {
  return {j.at("x").get<int>(), j.at("y").get<int>(), j.at("width").get<int>(), j.at("height").get<int>()};
}

json image_json(const ImageRecord& r) {
  json j = r.extra;
  j["image_id"] = r.image_id.value;
  j["source_uri"] = r.source_uri;
  j["roi"] = roi_json(r.roi);
  j["label_id"] = r.label_id ? json(r.label_id->value) : json(nullptr);
  j["feature_ref"] = r.feature_ref;
  j["ingest_time"] = r.ingest_time;
  return j;
}

ImageRecord image_from(const json& j) {
  ImageRecord r;
  r.image_id = ImageId{j.at("image_id").get<std::uint32_t>()};
  r.source_uri = j.at("source_uri").get<std::string>();
  r.roi = roi_from(j.at("roi"));
  if (j.contains("label_id") && !j["label_id"].is_null()) r.label_id = LabelId{j["label_id"].get<std::uint32_t>()};
  r.feature_ref = j.at("feature_ref").get<std::string>();
  r.ingest_time = j.value("ingest_time", "");
  r.extra = without(j, {"image_id", "source_uri", "roi", "label_id", "feature_ref", "ingest_time"});
  return r;
}

json label_json(const LabelRecord& r) {
  json j = r.extra;
  j["label_id"] = r.label_id.value;
  j["name"] = r.name;
  return j;
}

LabelRecord label_from(const json& j) {
  LabelRecord r;
  r.label_id = LabelId{j.at("label_id").get<std::uint32_t>()};
  r.name = j.at("name").get<std::string>();
  r.extra = without(j, {"label_id", "name"});
  return r;
}

}  // namespace

std::string normalize_label_name(std::string_view name) {
  const auto first = name.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) throw Error(ErrorCode::kInvalidInput, "label name is empty");
  const auto last = name.find_last_not_of(" \t\r\n");
  std::string out(name.substr(first, last - first + 1));
  if (out.size() > 128) throw Error(ErrorCode::kInvalidInput, "label name longer than 128 bytes");
  for (unsigned char ch : out) {
    if (ch < 0x20 || ch == 0x7f) throw Error(ErrorCode::kInvalidInput, "label name contains control characters");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generation

const FeatureSet& Generation::features_of(ImageId id) const {
  const auto it = features.find(id);
  if (it == features.end()) throw Error(ErrorCode::kNotFound, "image " + std::to_string(id.value) + " not in generation");
  return *it->second;
}

std::vector<ImageId> Generation::image_ids() const {
  std::vector<ImageId> ids;
  ids.reserve(features.size());
  for (const auto& [id, f] : features) ids.push_back(id);
  return ids;
}

std::unique_ptr<NeighborIndex> Generation::neighbor_index(std::size_t max_checks) const {
  if (info.backend == Backend::kPq) return std::make_unique<PqNeighborIndex>(pq);
  return std::make_unique<ForestNeighborIndex>(forest, max_checks);
}

// ---------------------------------------------------------------------------
// Catalog

Catalog::Catalog(fs::path dir, CatalogOptions options)
    : dir_(std::move(dir)), variant_(options.variant), flank_(std::move(options.flank)) {
  if (fs::exists(dir_ / "manifest.json")) {
    load_manifest();
  } else {
    fs::create_directories(dir_ / "features");
    write_manifest();
  }
}

void Catalog::load_manifest() {
  json m;
  try {
    m = json::parse(detail::read_file(dir_ / "manifest.json"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCatalogIntegrity, std::string("manifest.json: ") + e.what());
  }
  try {
    if (m.value("format", "") != kFormat) throw Error(ErrorCode::kCatalogIntegrity, "not a catalog manifest");
    if (m.value("version", 0) != kManifestVersion) {
      throw Error(ErrorCode::kIncompatible, "unsupported manifest version");
    }
    variant_ = parse_variant(m.value("descriptor_variant", "rootsift"));
    flank_ = m.value("flank", "");
    next_image_id_ = m.value("next_image_id", 1u);
    next_label_id_ = m.value("next_label_id", 1u);
    last_generation_ = m.value("last_generation", std::uint64_t{0});
    dirty_ = m.value("dirty", false);
    for (const json& l : m.value("labels", json::array())) {
      LabelRecord r = label_from(l);
      labels_.emplace(r.label_id, std::move(r));
    }
    for (const json& i : m.value("images", json::array())) {
      ImageRecord r = image_from(i);
      if (r.label_id && !labels_.contains(*r.label_id)) {
        throw Error(ErrorCode::kCatalogIntegrity, "image " + std::to_string(r.image_id.value) + " has an unknown label");
      }
      auto f = std::make_shared<const FeatureSet>(read_feature_file(dir_ / r.feature_ref));
      features_.emplace(r.image_id, std::move(f));
      images_.emplace(r.image_id, std::move(r));
    }
    extra_ = without(m, {"format", "version", "descriptor_variant", "flank", "next_image_id", "next_label_id",
                         "last_generation", "dirty", "labels", "images", "current_generation"});
    if (m.contains("current_generation") && !m["current_generation"].is_null()) {
      restore_generation(m["current_generation"]);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCatalogIntegrity, std::string("manifest.json: ") + e.what());
  }
}

void Catalog::write_manifest() const {
  json m = extra_;
  m["format"] = kFormat;
  m["version"] = kManifestVersion;
  m["descriptor_variant"] = to_string(variant_);
  m["flank"] = flank_;
  m["next_image_id"] = next_image_id_;
  m["next_label_id"] = next_label_id_;
  m["last_generation"] = last_generation_;
  m["dirty"] = dirty_;
  json labels = json::array();
  for (const auto& [id, r] : labels_) labels.push_back(label_json(r));
  json images = json::array();
  for (const auto& [id, r] : images_) images.push_back(image_json(r));
  m["labels"] = std::move(labels);
  m["images"] = std::move(images);
  m["current_generation"] = current_record_.is_null() ? json(nullptr) : current_record_;
  const std::string text = m.dump(2) + "\n";
  detail::write_file_atomic(dir_ / "manifest.json",
                            std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

LabelId Catalog::ensure_label(std::string_view name) {
  const std::string clean = normalize_label_name(name);
  for (const auto& [id, r] : labels_) {
    if (r.name == clean) return id;
  }
  const LabelId id{next_label_id_};
  std::lock_guard lock(state_);
  ++next_label_id_;
  labels_.emplace(id, LabelRecord{id, clean, json::object()});
  return id;
}

ImageRecord Catalog::add_image(const GrayImage& pixels, std::string source_uri, std::optional<Roi> roi,
                               std::optional<std::string> label, std::optional<std::string> ingest_time) {
  const Roi r = roi.value_or(Roi{0, 0, pixels.width(), pixels.height()});
  if (r.width <= 0 || r.height <= 0 || r.x < 0 || r.y < 0 || r.x + r.width > pixels.width() ||
      r.y + r.height > pixels.height()) {
    throw Error(ErrorCode::kInvalidRoi, "roi does not lie within the image");
  }
  if (label) normalize_label_name(*label);
  auto features = std::make_shared<const FeatureSet>(extract_features(pixels, r, variant_));

  std::lock_guard writer(writer_);
  for (const auto& [id, rec] : images_) {
    if (rec.source_uri == source_uri && rec.roi == r) {
      spdlog::warn("image {} already registers {} with the same roi", id.value, source_uri);
    }
  }
  ImageRecord rec;
  rec.image_id = ImageId{next_image_id_};
  rec.source_uri = std::move(source_uri);
  rec.roi = r;
  rec.feature_ref = sidecar_ref(rec.image_id);
  rec.ingest_time = ingest_time.value_or(now_utc());
  write_feature_file(*features, dir_ / rec.feature_ref);
  if (label) rec.label_id = ensure_label(*label);
  {
    std::lock_guard lock(state_);
    ++next_image_id_;
    images_.emplace(rec.image_id, rec);
    features_.emplace(rec.image_id, std::move(features));
    dirty_ = true;
  }
  write_manifest();
  return rec;
}

ImageRecord Catalog::add_image_file(const fs::path& file, std::optional<Roi> roi, std::optional<std::string> label,
                                    std::optional<std::string> ingest_time) {
  const GrayImage pixels = load_image(file);
  std::string uri = file.string();
  std::error_code ec;
  const fs::path canon_file = fs::weakly_canonical(file, ec);
  const fs::path canon_dir = fs::weakly_canonical(dir_, ec);
  if (!ec) {
    const fs::path rel = canon_file.lexically_relative(canon_dir);
    if (!rel.empty() && *rel.begin() != "..") uri = rel.generic_string();
  }
  return add_image(pixels, std::move(uri), roi, std::move(label), std::move(ingest_time));
}

ImageRecord Catalog::assign_label(ImageId id, std::string_view name) {
  std::lock_guard writer(writer_);
  const auto it = images_.find(id);
  if (it == images_.end()) throw Error(ErrorCode::kNotFound, "no image " + std::to_string(id.value));
  const LabelId label = ensure_label(name);
  ImageRecord rec;
  {
    std::lock_guard lock(state_);
    it->second.label_id = label;
    dirty_ = true;
    rec = it->second;
  }
  write_manifest();
  return rec;
}

void Catalog::remove_image(ImageId id) {
  std::lock_guard writer(writer_);
  {
    std::lock_guard lock(state_);
    if (images_.erase(id) == 0) throw Error(ErrorCode::kNotFound, "no image " + std::to_string(id.value));
    features_.erase(id);
    dirty_ = true;
  }
  write_manifest();
}

std::shared_ptr<Generation> Catalog::assemble(const IndexGeneration& info,
                                              const std::vector<std::pair<ImageId, std::optional<LabelId>>>& members,
                                              const PQTrainOptions& pq, bool load_cached) {
  auto gen = std::make_shared<Generation>();
  gen->info = info;
  auto pool = std::make_shared<DescriptorPool>();
  for (const auto& [id, label] : members) {
    std::shared_ptr<const FeatureSet> stored;
    if (const auto it = features_.find(id); it != features_.end()) {
      stored = it->second;
    } else {
      stored = std::make_shared<const FeatureSet>(read_feature_file(dir_ / sidecar_ref(id)));
    }
    std::shared_ptr<const FeatureSet> f =
        stored->variant == info.variant ? stored : std::make_shared<const FeatureSet>(convert_variant(*stored, info.variant));
    pool->add_image(id, f->descriptors);
    gen->features.emplace(id, std::move(f));
    if (label) {
      gen->labels.image_labels.emplace(id, *label);
      const auto lit = labels_.find(*label);
      gen->label_names.emplace(*label, lit != labels_.end() ? lit->second.name : std::to_string(label->value));
    }
  }
  for (const auto& [id, name] : gen->label_names) gen->labels.labels.push_back(id);
  if (pool->empty()) throw Error(ErrorCode::kEmptyPool, "no descriptors to index");

  const PoolFingerprint fp = pool->fingerprint();
  if (load_cached && !(fp == info.fingerprint)) {
    throw Error(ErrorCode::kCatalogIntegrity, "feature sidecars no longer match generation " +
                                                  std::to_string(info.generation));
  }
  gen->info.fingerprint = fp;
  gen->pool = pool;

  const fs::path where = dir_ / generation_ref(info.generation);
  fs::create_directories(where);
  if (info.backend == Backend::kKdForest) {
    if (load_cached) {
      try {
        gen->forest = std::make_shared<const KdForest>(KdForest::load(where / "forest.hskd", pool));
      } catch (const Error& e) {
        spdlog::info("rebuilding forest cache for generation {}: {}", info.generation, e.what());
      }
    }
    if (!gen->forest) {
      gen->forest = std::make_shared<const KdForest>(KdForest::build(pool, info.num_trees, info.seed));
      gen->forest->save(where / "forest.hskd");
    }
  } else {
    if (load_cached) {
      try {
        gen->pq = std::make_shared<const PQIndex>(read_codebook(where / "codebook.hspq"),
                                                  decode_code_pool(detail::read_file(where / "codes.hspc")), pool);
      } catch (const Error& e) {
        spdlog::info("retraining quantizer for generation {}: {}", info.generation, e.what());
      }
    }
    if (!gen->pq) {
      gen->pq = std::make_shared<const PQIndex>(PQIndex::build(pool, static_cast<std::uint32_t>(info.seed), pq));
      write_codebook(gen->pq->codebook(), where / "codebook.hspq");
      const auto bytes = encode_code_pool(gen->pq->codes());
      detail::write_file_atomic(where / "codes.hspc", bytes);
    }
  }
  return gen;
}

IndexGeneration Catalog::build_generation(const BuildParams& params) {
  if (params.num_trees < 1) throw Error(ErrorCode::kInvalidInput, "num_trees must be at least 1");
  if (params.max_checks < 1) throw Error(ErrorCode::kInvalidInput, "max_checks must be at least 1");
  std::lock_guard writer(writer_);
  std::vector<std::pair<ImageId, std::optional<LabelId>>> members;
  for (const auto& [id, rec] : images_) {
    if (!features_.at(id)->descriptors.empty()) members.emplace_back(id, rec.label_id);
  }
  if (members.empty()) throw Error(ErrorCode::kEmptyPool, "catalog has no descriptors to index");

  IndexGeneration info;
  info.generation = last_generation_ + 1;
  info.backend = params.backend;
  info.variant = params.variant;
  info.num_trees = params.num_trees;
  info.max_checks = params.max_checks;
  info.seed = params.seed;
  auto gen = assemble(info, members, params.pq, false);

  json record = {
      {"generation", gen->info.generation},
      {"backend", to_string(info.backend)},
      {"descriptor_variant", to_string(info.variant)},
      {"num_trees", info.num_trees},
      {"max_checks", format_count(info.max_checks)},
      {"seed", info.seed},
      {"fingerprint", {{"count", gen->info.fingerprint.count}, {"checksum", gen->info.fingerprint.checksum}}},
      {"path", generation_ref(info.generation)},
      {"pq", {{"iterations", params.pq.iterations}, {"max_training_vectors", params.pq.max_training_vectors}}},
  };
  json m = json::array();
  for (const auto& [id, label] : members) m.push_back({id.value, label ? json(label->value) : json(nullptr)});
  record["members"] = std::move(m);

  {
    std::lock_guard lock(state_);
    last_generation_ = info.generation;
    dirty_ = false;
    current_ = gen;
    current_record_ = std::move(record);
  }
  write_manifest();
  prune_files();
  spdlog::info("generation {} built: {} descriptors from {} images", info.generation, gen->pool->size(),
               members.size());
  return gen->info;
}

void Catalog::restore_generation(const json& record) {
  try {
    IndexGeneration info;
    info.generation = record.at("generation").get<std::uint64_t>();
    info.backend = parse_backend(record.at("backend").get<std::string>());
    info.variant = parse_variant(record.at("descriptor_variant").get<std::string>());
    info.num_trees = record.at("num_trees").get<int>();
    info.seed = record.at("seed").get<std::uint64_t>();
    if (record.contains("max_checks")) info.max_checks = parse_count(record["max_checks"].get<std::string>());
    info.fingerprint = {record.at("fingerprint").at("count").get<std::uint64_t>(),
                        record.at("fingerprint").at("checksum").get<std::uint64_t>()};
    PQTrainOptions pq;
    if (record.contains("pq")) {
      pq.iterations = record["pq"].value("iterations", pq.iterations);
      pq.max_training_vectors = record["pq"].value("max_training_vectors", pq.max_training_vectors);
    }
    std::vector<std::pair<ImageId, std::optional<LabelId>>> members;
    for (const json& m : record.at("members")) {
      std::optional<LabelId> label;
      if (!m.at(1).is_null()) label = LabelId{m.at(1).get<std::uint32_t>()};
      members.emplace_back(ImageId{m.at(0).get<std::uint32_t>()}, label);
    }
    current_ = assemble(info, members, pq, true);
    current_record_ = record;
  } catch (const std::exception& e) {
    spdlog::warn("generation record unusable, a rebuild is needed: {}", e.what());
    current_.reset();
    current_record_ = nullptr;
    dirty_ = true;
  }
}

void Catalog::prune_files() const {
  std::set<std::string> keep;
  for (const auto& [id, rec] : images_) keep.insert((dir_ / rec.feature_ref).lexically_normal().string());
  if (current_) {
    for (const auto& [id, f] : current_->features) keep.insert((dir_ / sidecar_ref(id)).lexically_normal().string());
  }
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir_ / "features", ec)) {
    if (entry.path().extension() == ".hsft" && !keep.contains(entry.path().lexically_normal().string())) {
      fs::remove(entry.path(), ec);
    }
  }
  const std::string live = current_ ? std::to_string(current_->info.generation) : "";
  for (const auto& entry : fs::directory_iterator(dir_ / "index", ec)) {
    if (entry.is_directory() && entry.path().filename() != live) fs::remove_all(entry.path(), ec);
  }
}

std::shared_ptr<const Generation> Catalog::current() const {
  std::lock_guard lock(state_);
  return current_;
}

std::vector<ImageRecord> Catalog::images() const {
  std::lock_guard lock(state_);
  std::vector<ImageRecord> out;
  out.reserve(images_.size());
  for (const auto& [id, r] : images_) out.push_back(r);
  return out;
}

std::vector<LabelRecord> Catalog::labels() const {
  std::lock_guard lock(state_);
  std::vector<LabelRecord> out;
  out.reserve(labels_.size());
  for (const auto& [id, r] : labels_) out.push_back(r);
  return out;
}

ImageRecord Catalog::image(ImageId id) const {
  std::lock_guard lock(state_);
  const auto it = images_.find(id);
  if (it == images_.end()) throw Error(ErrorCode::kNotFound, "no image " + std::to_string(id.value));
  return it->second;
}

std::optional<LabelRecord> Catalog::find_label(std::string_view name) const {
  std::lock_guard lock(state_);
  for (const auto& [id, r] : labels_) {
    if (r.name == name) return r;
  }
  return std::nullopt;
}

std::optional<LabelRecord> Catalog::label(LabelId id) const {
  std::lock_guard lock(state_);
  const auto it = labels_.find(id);
  if (it == labels_.end()) return std::nullopt;
  return it->second;
}

std::shared_ptr<const FeatureSet> Catalog::features(ImageId id) const {
  std::lock_guard lock(state_);
  const auto it = features_.find(id);
  if (it == features_.end()) throw Error(ErrorCode::kNotFound, "no image " + std::to_string(id.value));
  return it->second;
}

bool Catalog::dirty() const {
  std::lock_guard lock(state_);
  return dirty_;
}

LabelMap Catalog::label_map() const {
  std::lock_guard lock(state_);
  LabelMap m;
  for (const auto& [id, r] : labels_) m.labels.push_back(id);
  for (const auto& [id, r] : images_) {
    if (r.label_id) m.image_labels.emplace(id, *r.label_id);
  }
  return m;
}

}  // namespace stripeid
