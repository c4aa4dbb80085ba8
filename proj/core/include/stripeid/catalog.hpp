#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stripeid/ann_index.hpp"
#include "stripeid/config.hpp"
#include "stripeid/features.hpp"
#include "stripeid/matching.hpp"
#include "stripeid/pq_index.hpp"
#include "stripeid/scoring.hpp"
#include "stripeid/types.hpp"

namespace stripeid {

struct ImageRecord {
  ImageId image_id;
  std::string source_uri;
  Roi roi;
  std::optional<LabelId> label_id;
  /// Sidecar path relative to the catalog directory.
  std::string feature_ref;
  std::string ingest_time;
  /// Manifest fields this version does not know; written back untouched.
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct LabelRecord {
  LabelId label_id;
  std::string name;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const LabelRecord&, const LabelRecord&) = default;
};

struct BuildParams {
  Backend backend = Backend::kKdForest;
  int num_trees = 4;
  /// Default search budget recorded with the generation.
  std::size_t max_checks = 128;
  std::uint64_t seed = 0;
  DescriptorVariant variant = DescriptorVariant::kRootSift;
  PQTrainOptions pq;
};

struct IndexGeneration {
  std::uint64_t generation = 0;
  Backend backend = Backend::kKdForest;
  DescriptorVariant variant = DescriptorVariant::kRootSift;
  PoolFingerprint fingerprint;
  int num_trees = 0;
  std::size_t max_checks = 128;
  std::uint64_t seed = 0;
};

/// Immutable, self-contained view of one built index: the pool, its
/// backend, the database features and the labels as they were at build time.
struct Generation {
  IndexGeneration info;
  std::shared_ptr<const DescriptorPool> pool;
  std::shared_ptr<const KdForest> forest;
  std::shared_ptr<const PQIndex> pq;
  std::map<ImageId, std::shared_ptr<const FeatureSet>> features;
  LabelMap labels;
  std::map<LabelId, std::string> label_names;

  /// Throws kNotFound.
  const FeatureSet& features_of(ImageId id) const;
  std::vector<ImageId> image_ids() const;
  /// Forest or PQ search over the pool.
  std::unique_ptr<NeighborIndex> neighbor_index(std::size_t max_checks) const;
};

struct CatalogOptions {
  /// Variant stored in the sidecars of a new catalog.
  DescriptorVariant variant = DescriptorVariant::kRootSift;
  std::string flank;
};

/// A directory holding manifest.json, features/<image_id>.hsft and
/// index/<generation>/. Mutations are serialized and persisted before they
/// return; readers take the current Generation and never block on a build.
class Catalog {
 public:
  /// Opens the catalog in `dir`, creating an empty one if there is no manifest.
  explicit Catalog(std::filesystem::path dir, CatalogOptions options = {});
  Catalog(const Catalog&) = delete;
  Catalog& operator=(const Catalog&) = delete;

  const std::filesystem::path& dir() const noexcept { return dir_; }
  DescriptorVariant variant() const noexcept { return variant_; }

  /// Extracts features eagerly. `roi` defaults to the whole image and must lie
  /// inside it (kInvalidRoi). `ingest_time` defaults to now (UTC, ISO 8601).
  ImageRecord add_image(const GrayImage& pixels, std::string source_uri, std::optional<Roi> roi,
                        std::optional<std::string> label, std::optional<std::string> ingest_time = {});
  /// Loads `file`; the recorded source is relative when the file sits inside
  /// the catalog directory.
  ImageRecord add_image_file(const std::filesystem::path& file, std::optional<Roi> roi,
                             std::optional<std::string> label, std::optional<std::string> ingest_time = {});
  /// Creates the label on first use. Throws kNotFound or kInvalidInput.
  ImageRecord assign_label(ImageId id, std::string_view name);
  void remove_image(ImageId id);

  /// Builds and publishes the next generation. Throws kEmptyPool when no
  /// image has a descriptor.
  IndexGeneration build_generation(const BuildParams& params);

  /// Null until a generation has been built.
  std::shared_ptr<const Generation> current() const;

  std::vector<ImageRecord> images() const;
  std::vector<LabelRecord> labels() const;
  /// Throws kNotFound.
  ImageRecord image(ImageId id) const;
  std::optional<LabelRecord> find_label(std::string_view name) const;
  std::optional<LabelRecord> label(LabelId id) const;
  /// Throws kNotFound.
  std::shared_ptr<const FeatureSet> features(ImageId id) const;
  /// True when the catalog changed since the current generation was built.
  bool dirty() const;

  /// Ground-truth helper for evaluation: labels as of now.
  LabelMap label_map() const;

 private:
  void load_manifest();
  void write_manifest() const;
  LabelId ensure_label(std::string_view name);
  void restore_generation(const nlohmann::json& record);
  std::shared_ptr<Generation> assemble(const IndexGeneration& info,
                                       const std::vector<std::pair<ImageId, std::optional<LabelId>>>& members,
                                       const PQTrainOptions& pq, bool load_cached);
  void prune_files() const;

  std::filesystem::path dir_;
  DescriptorVariant variant_;
  std::string flank_;

  mutable std::mutex writer_;  // serializes mutations and builds
  mutable std::mutex state_;   // guards the fields below
  std::map<ImageId, ImageRecord> images_;
  std::map<LabelId, LabelRecord> labels_;
  std::map<ImageId, std::shared_ptr<const FeatureSet>> features_;
  std::uint32_t next_image_id_ = 1;
  std::uint32_t next_label_id_ = 1;
  std::uint64_t last_generation_ = 0;
  bool dirty_ = false;
  std::shared_ptr<const Generation> current_;
  nlohmann::json current_record_;
  nlohmann::json extra_ = nlohmann::json::object();
};

/// Trimmed, non-empty, printable, at most 128 bytes. Throws kInvalidInput.
std::string normalize_label_name(std::string_view name);

}  // namespace stripeid
