#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "stripeid/catalog.hpp"
#include "stripeid/config.hpp"
#include "stripeid/scoring.hpp"

namespace stripeid {

struct RankedResult {
  /// Label scoring (pooled, de-duplicated matches).
  std::vector<ScoredLabel> labels;
  /// Image scoring (each label as its best image).
  std::vector<ScoredLabel> image_labels;
  std::vector<ScoredImage> images;
  QueryConfig config;
  std::uint64_t generation = 0;
  /// Matching, scoring and reranking time, excluding feature extraction.
  double match_seconds = 0.0;
  double total_seconds = 0.0;
};

/// Throws kIncompatible when the generation cannot serve `config`
/// (descriptor variant, or backend for one-vs-many).
void check_compatible(const Generation& gen, const QueryConfig& config);

/// Runs matching, initial scoring, spatial reranking and both label
/// rankings for already extracted query features. Database features owned by
/// `exclude` are ignored (leave-one-out queries).
RankedResult rank_features(const Generation& gen, const FeatureSet& query, const QueryConfig& config,
                           std::optional<ImageId> exclude = std::nullopt);

/// Full pipeline from pixels. Throws kInvalidRoi for an ROI that misses the
/// image.
RankedResult run_query(const Generation& gen, const GrayImage& image, const Roi& roi, const QueryConfig& config);

/// 1-based position of `label` in a sorted label list; 0 if absent.
std::size_t rank_of(std::span<const ScoredLabel> labels, LabelId label);

struct EvalRow {
  ImageId query;
  LabelId true_label;
  std::size_t rank_label = 0;
  std::size_t rank_image = 0;
  double seconds = 0.0;
};

struct EvalAggregates {
  std::size_t queries = 0;
  std::size_t label_rank_gt1 = 0;
  std::size_t label_rank_gt5 = 0;
  std::size_t image_rank_gt1 = 0;
  std::size_t image_rank_gt5 = 0;
  double tpq_seconds = 0.0;

  friend bool operator==(const EvalAggregates&, const EvalAggregates&) = default;
};

EvalAggregates aggregate(std::span<const EvalRow> rows);

/// Descriptor storage of the searched pool: raw 32-bit floats against PQ codes.
struct PoolMemory {
  std::size_t descriptors = 0;
  std::size_t raw_bytes = 0;
  std::size_t code_bytes = 0;

  double ratio() const noexcept {
    return code_bytes ? static_cast<double>(raw_bytes) / static_cast<double>(code_bytes) : 0.0;
  }
};

struct EvalReport {
  QueryConfig config;
  std::uint64_t generation = 0;
  std::vector<EvalRow> rows;
  EvalAggregates totals;
  /// Set for 1vM runs on the PQ backend.
  std::optional<PoolMemory> memory;
};

struct EvalOptions {
  /// Evenly spaced subset of the eligible queries when there are more.
  std::size_t max_queries = std::numeric_limits<std::size_t>::max();
  std::function<void(std::size_t done, std::size_t total)> progress;
};

/// Images whose label has at least two images in the generation, by id.
std::vector<ImageId> eligible_queries(const Generation& gen);

/// Leave-one-out evaluation over the eligible queries, reusing their stored
/// features. Throws kEmptyEval when no query is eligible.
EvalReport run_eval(const Generation& gen, const QueryConfig& config, const EvalOptions& options = {});

}  // namespace stripeid
