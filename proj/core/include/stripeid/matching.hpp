#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "stripeid/ann_index.hpp"
#include "stripeid/features.hpp"
#include "stripeid/match_set.hpp"
#include "stripeid/pq_index.hpp"

namespace stripeid {

/// Match scoring for the k-nearest-neighbor search, given the squared
/// distance to the p-th neighbor and to the (k+1)-th (normalizing) neighbor.
enum class ScoringFn { kLnbnn, kRatio, kLnrat, kCount };

std::string_view to_string(ScoringFn fn) noexcept;
/// Accepts "lnbnn", "ratio", "lnrat", "count" (case-insensitive).
ScoringFn parse_scoring_fn(std::string_view name);

/// Guard for zero squared distances (duplicate descriptors).
inline constexpr double kDistanceEpsilon = 1e-8;

/// Guarded ratio max(norm, eps) / max(p, eps); always >= 1 when p <= norm.
double guarded_ratio(double dist_sq_p, double dist_sq_norm) noexcept;

/// lnbnn: norm - p; ratio: guarded_ratio; lnrat: ln(guarded_ratio); count: 1.
/// Throws kContract unless 0 <= dist_sq_p <= dist_sq_norm.
double delta(ScoringFn fn, double dist_sq_p, double dist_sq_norm);

/// Nearest-neighbor lookup over an indexed descriptor pool.
class NeighborIndex {
 public:
  virtual ~NeighborIndex() = default;
  virtual const DescriptorPool& pool() const = 0;
  virtual NeighborList search(std::span<const float, kDescriptorDim> q, std::size_t k) const = 0;
};

class ForestNeighborIndex final : public NeighborIndex {
 public:
  ForestNeighborIndex(std::shared_ptr<const KdForest> forest, std::size_t max_checks)
      : forest_(std::move(forest)), max_checks_(max_checks) {}
  const DescriptorPool& pool() const override { return forest_->pool(); }
  NeighborList search(std::span<const float, kDescriptorDim> q, std::size_t k) const override {
    return forest_->search(q, k, max_checks_);
  }

 private:
  std::shared_ptr<const KdForest> forest_;
  std::size_t max_checks_;
};

class PqNeighborIndex final : public NeighborIndex {
 public:
  explicit PqNeighborIndex(std::shared_ptr<const PQIndex> index) : index_(std::move(index)) {}
  const DescriptorPool& pool() const override { return index_->pool(); }
  NeighborList search(std::span<const float, kDescriptorDim> q, std::size_t k) const override {
    return index_->search(q, k);
  }

 private:
  std::shared_ptr<const PQIndex> index_;
};

/// Full-scan index; the reference for everything else.
class ExhaustiveNeighborIndex final : public NeighborIndex {
 public:
  explicit ExhaustiveNeighborIndex(std::shared_ptr<const DescriptorPool> pool) : pool_(std::move(pool)) {}
  const DescriptorPool& pool() const override { return *pool_; }
  NeighborList search(std::span<const float, kDescriptorDim> q, std::size_t k) const override {
    return brute_force_knn(*pool_, q, k);
  }

 private:
  std::shared_ptr<const DescriptorPool> pool_;
};

/// Query descriptor counts up to this use exact forest search in one-vs-one.
inline constexpr std::size_t kExactSearchLimit = 2000;

/// Ratio-test matching of one database image against the query. For every
/// database descriptor the two nearest query descriptors are found in
/// `query_forest`; (i, j, r) is kept when r = d2/d1 exceeds `t_ratio`.
/// Fewer than two query descriptors yield an empty set.
MatchSet match_one_vs_one(const FeatureSet& db, const FeatureSet& query, double t_ratio,
                          const KdForest& query_forest, std::size_t max_checks = 128,
                          ImageId db_image = ImageId{});

struct OneVsManyOptions {
  std::size_t k = 1;
  ScoringFn fn = ScoringFn::kLnrat;
  /// Neighbors owned by this image are skipped (leave-one-out evaluation).
  std::optional<ImageId> exclude_image;
  /// Extra neighbors fetched up front to absorb excluded ones.
  std::size_t pad = 3;
};

/// Competitive matching against every database image at once: each query
/// descriptor scores its k nearest foreign neighbors against the (k+1)-th.
/// At most one triple per (query descriptor, image) survives, the best one.
/// Result is ordered by image id; triples by query index. Throws
/// kInsufficientDatabase when fewer than k+1 foreign descriptors exist.
std::vector<MatchSet> match_one_vs_many(const FeatureSet& query, const NeighborIndex& index,
                                        const OneVsManyOptions& options);

}  // namespace stripeid
