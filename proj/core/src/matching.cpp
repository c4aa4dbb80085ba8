#include "stripeid/matching.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <string>

#include "stripeid/error.hpp"

namespace stripeid {

std::string_view to_string(ScoringFn fn) noexcept {
  switch (fn) {
    case ScoringFn::kLnbnn: return "lnbnn";
    case ScoringFn::kRatio: return "ratio";
    case ScoringFn::kLnrat: return "lnrat";
    case ScoringFn::kCount: return "count";
  }
  return "unknown";
}

ScoringFn parse_scoring_fn(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  if (lower == "lnbnn") return ScoringFn::kLnbnn;
  if (lower == "ratio") return ScoringFn::kRatio;
  if (lower == "lnrat") return ScoringFn::kLnrat;
  if (lower == "count") return ScoringFn::kCount;
  throw Error(ErrorCode::kInvalidInput, "unknown scoring function '" + std::string(name) + "'");
}

double guarded_ratio(double dist_sq_p, double dist_sq_norm) noexcept {
  return std::max(dist_sq_norm, kDistanceEpsilon) / std::max(dist_sq_p, kDistanceEpsilon);
}

double delta(ScoringFn fn, double dist_sq_p, double dist_sq_norm) {
  if (!(dist_sq_p >= 0.0 && dist_sq_p <= dist_sq_norm)) {
    throw Error(ErrorCode::kContract, "delta requires 0 <= dist_sq_p <= dist_sq_norm");
  }
  switch (fn) {
    case ScoringFn::kLnbnn: return dist_sq_norm - dist_sq_p;
    case ScoringFn::kRatio: return guarded_ratio(dist_sq_p, dist_sq_norm);
    case ScoringFn::kLnrat: return std::log(guarded_ratio(dist_sq_p, dist_sq_norm));
    case ScoringFn::kCount: return 1.0;
  }
  throw Error(ErrorCode::kContract, "unknown scoring function");
}

MatchSet match_one_vs_one(const FeatureSet& db, const FeatureSet& query, double t_ratio,
                          const KdForest& query_forest, std::size_t max_checks, ImageId db_image) {
  MatchSet out;
  out.image_id = db_image;
  if (query.descriptors.size() < 2) {
    spdlog::debug("one-vs-one: query has {} descriptors, need 2", query.descriptors.size());
    return out;
  }
  const std::size_t checks = query.descriptors.size() <= kExactSearchLimit ? kUnlimitedChecks : max_checks;
  for (std::size_t i = 0; i < db.descriptors.size(); ++i) {
    const NeighborList nn = query_forest.search(db.descriptors[i], 2, checks);
    if (nn.size() < 2) continue;
    const double r = guarded_ratio(nn.distances_sq[0], nn.distances_sq[1]);
    if (r > t_ratio) {
      out.triples.push_back({static_cast<std::uint32_t>(i), nn.indices[0], r});
    }
  }
  return out;
}

std::vector<MatchSet> match_one_vs_many(const FeatureSet& query, const NeighborIndex& index,
                                        const OneVsManyOptions& options) {
  const DescriptorPool& pool = index.pool();
  const std::size_t k = options.k;
  if (k == 0) throw Error(ErrorCode::kInvalidInput, "k must be at least 1");

  std::size_t foreign = pool.size();
  if (options.exclude_image) {
    foreign = static_cast<std::size_t>(std::count_if(
        pool.owners().begin(), pool.owners().end(),
        [&](const DescriptorOwner& o) { return o.image_id != *options.exclude_image; }));
  }
  if (foreign < k + 1) {
    throw Error(ErrorCode::kInsufficientDatabase,
                "database has " + std::to_string(foreign) + " descriptors, need k+1 = " + std::to_string(k + 1));
  }

  std::map<ImageId, std::vector<MatchTriple>> sets;
  struct Vote {
    ImageId image;
    MatchTriple triple;
  };
  std::vector<Vote> votes;
  std::vector<std::size_t> kept;
  for (std::size_t j = 0; j < query.descriptors.size(); ++j) {
    const auto& q = query.descriptors[j];
    std::size_t fetch = options.exclude_image ? k + 1 + options.pad : k + 1;
    NeighborList nn;
    while (true) {
      nn = index.search(q, fetch);
      kept.clear();
      for (std::size_t n = 0; n < nn.size() && kept.size() < k + 1; ++n) {
        if (options.exclude_image && pool.owner(nn.indices[n]).image_id == *options.exclude_image) continue;
        kept.push_back(n);
      }
      if (kept.size() >= k + 1 || nn.size() < fetch || fetch >= pool.size()) break;
      fetch = std::min(pool.size(), fetch * 2);
    }
    if (kept.size() < k + 1) continue;  // approximate search can come up short

    const double norm = nn.distances_sq[kept[k]];
    votes.clear();
    for (std::size_t p = 0; p < k; ++p) {
      const std::uint32_t idx = nn.indices[kept[p]];
      const DescriptorOwner& owner = pool.owner(idx);
      const double score = delta(options.fn, nn.distances_sq[kept[p]], norm);
      const MatchTriple t{owner.local_index, static_cast<std::uint32_t>(j), score};
      auto it = std::find_if(votes.begin(), votes.end(), [&](const Vote& v) { return v.image == owner.image_id; });
      if (it == votes.end()) {
        votes.push_back({owner.image_id, t});
      } else if (score > it->triple.score) {
        it->triple = t;
      }
    }
    for (const Vote& v : votes) sets[v.image].push_back(v.triple);
  }

  std::vector<MatchSet> out;
  out.reserve(sets.size());
  for (auto& [image, triples] : sets) out.push_back({image, std::move(triples)});
  return out;
}

}  // namespace stripeid
