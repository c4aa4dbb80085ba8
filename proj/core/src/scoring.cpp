#include "stripeid/scoring.hpp"

#include <algorithm>
#include <map>
#include <tuple>
#include <unordered_set>

#include "stripeid/error.hpp"
#include "stripeid/geometry.hpp"

namespace stripeid {

double image_score(std::span<const MatchTriple> triples) noexcept {
  double sum = 0.0;
  for (const MatchTriple& t : triples) sum += t.score;
  return sum;
}

void sort_images(std::vector<ScoredImage>& images) {
  std::stable_sort(images.begin(), images.end(), [](const ScoredImage& a, const ScoredImage& b) {
    if (a.score() != b.score()) return a.score() > b.score();
    return a.image_id < b.image_id;
  });
}

void sort_labels(std::vector<ScoredLabel>& labels) {
  std::stable_sort(labels.begin(), labels.end(), [](const ScoredLabel& a, const ScoredLabel& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.best_image_id.has_value() != b.best_image_id.has_value()) return a.best_image_id.has_value();
    if (a.best_image_id && *a.best_image_id != *b.best_image_id) return *a.best_image_id < *b.best_image_id;
    return a.label_id < b.label_id;
  });
}

std::vector<ScoredImage> initial_scores(std::span<const MatchSet> match_sets) {
  std::vector<ScoredImage> out;
  out.reserve(match_sets.size());
  for (const MatchSet& m : match_sets) out.push_back({m.image_id, image_score(m), std::nullopt, std::nullopt});
  sort_images(out);
  return out;
}

namespace {

const MatchSet* find_set(std::span<const MatchSet> sets, const std::unordered_map<ImageId, std::size_t>& where,
                         ImageId id) {
  const auto it = where.find(id);
  return it == where.end() ? nullptr : &sets[it->second];
}

std::unordered_map<ImageId, std::size_t> index_sets(std::span<const MatchSet> sets) {
  std::unordered_map<ImageId, std::size_t> where;
  for (std::size_t i = 0; i < sets.size(); ++i) where.emplace(sets[i].image_id, i);
  return where;
}

MatchSet verify(const FeatureSet& query, const FeatureSet& db, const MatchSet& matches, double t_sp) {
  const auto& triples = matches.triples;
  std::vector<std::size_t> best;
  const MatchTriple* best_origin = nullptr;
  for (const MatchTriple& m : triples) {
    AffineHypothesis hyp;
    try {
      hyp = affine_hypothesis(db.keypoints[m.db_index], query.keypoints[m.query_index]);
    } catch (const Error&) {
      continue;
    }
    auto inliers = count_inliers(hyp, triples, db.keypoints, query.keypoints, t_sp);
    const bool better =
        best_origin == nullptr || inliers.size() > best.size() ||
        (inliers.size() == best.size() &&
         (m.score > best_origin->score || (m.score == best_origin->score && m.db_index < best_origin->db_index)));
    if (better) {
      best = std::move(inliers);
      best_origin = &m;
    }
  }

  if (best.size() >= 4) {
    std::vector<PointPair> pairs;
    pairs.reserve(best.size());
    for (std::size_t idx : best) {
      const MatchTriple& m = triples[idx];
      pairs.push_back({query.keypoints[m.query_index].position(), db.keypoints[m.db_index].position()});
    }
    try {
      const Homography h = estimate_homography(pairs);
      best = count_inliers(h, triples, db.keypoints, query.keypoints, t_sp);
    } catch (const Error&) {
      // keep the affine inliers
    }
  }

  MatchSet out;
  out.image_id = matches.image_id;
  out.triples.reserve(best.size());
  for (std::size_t idx : best) out.triples.push_back(triples[idx]);
  return out;
}

}  // namespace

std::vector<ScoredImage> spatial_rerank(const FeatureSet& query, std::vector<ScoredImage> candidates,
                                        std::span<const MatchSet> match_sets,
                                        const FeatureLookup& db_features, std::size_t k_sr,
                                        double t_sp_frac) {
  const auto where = index_sets(match_sets);
  const std::size_t n = std::min(k_sr, candidates.size());
  for (std::size_t c = 0; c < n; ++c) {
    ScoredImage& img = candidates[c];
    const MatchSet* set = find_set(match_sets, where, img.image_id);
    MatchSet inliers;
    inliers.image_id = img.image_id;
    if (set != nullptr && !set->triples.empty()) {
      const FeatureSet& db = db_features(img.image_id);
      inliers = verify(query, db, *set, t_sp_frac * db.diagonal());
    }
    img.reranked_score = image_score(inliers);
    img.inlier_matches = std::move(inliers);
  }
  sort_images(candidates);
  return candidates;
}

namespace {

std::vector<ScoredImage> sorted_copy(std::span<const ScoredImage> images) {
  std::vector<ScoredImage> v(images.begin(), images.end());
  sort_images(v);
  return v;
}

std::unordered_map<LabelId, std::size_t> label_slots(const LabelMap& labels, std::vector<ScoredLabel>& out) {
  std::unordered_map<LabelId, std::size_t> slot;
  for (LabelId l : labels.labels) {
    if (slot.emplace(l, out.size()).second) out.push_back({l, 0.0, std::nullopt});
  }
  return slot;
}

std::size_t slot_of(const std::unordered_map<LabelId, std::size_t>& slots, LabelId label) {
  const auto it = slots.find(label);
  if (it == slots.end()) {
    throw Error(ErrorCode::kCatalogIntegrity, "image refers to unknown label " + std::to_string(label.value));
  }
  return it->second;
}

// Once anything was reranked only reranked images speak for their labels.
bool reranking_happened(std::span<const ScoredImage> images) {
  return std::any_of(images.begin(), images.end(), [](const ScoredImage& i) { return i.reranked_score.has_value(); });
}

bool contributes(const ScoredImage& img, bool any_reranked) { return !any_reranked || img.reranked_score; }

}  // namespace

std::vector<ScoredLabel> label_score(std::span<const ScoredImage> images,
                                     std::span<const MatchSet> match_sets, const LabelMap& labels) {
  std::vector<ScoredLabel> out;
  const auto slots = label_slots(labels, out);
  const auto where = index_sets(match_sets);
  const bool any_reranked = reranking_happened(images);

  struct Best {
    double score;
    ImageId image;
    std::uint32_t db_index;
    std::size_t visit;  // summation order: a one-image label sums exactly like image_score
  };
  // Per label slot: query feature index -> surviving triple.
  std::vector<std::map<std::uint32_t, Best>> pooled(out.size());
  std::vector<bool> shortlisted(out.size(), false);
  std::size_t visit = 0;
  for (const ScoredImage& img : sorted_copy(images)) {
    const auto lit = labels.image_labels.find(img.image_id);
    if (lit == labels.image_labels.end()) continue;
    const std::size_t s = slot_of(slots, lit->second);
    const bool counts = contributes(img, any_reranked);
    if (!out[s].best_image_id || (counts && !shortlisted[s])) out[s].best_image_id = img.image_id;
    if (!counts) continue;
    shortlisted[s] = true;

    const MatchSet* set = img.inlier_matches ? &*img.inlier_matches : find_set(match_sets, where, img.image_id);
    if (set == nullptr) continue;
    for (const MatchTriple& t : set->triples) {
      const Best cand{t.score, img.image_id, t.db_index, visit++};
      auto [it, inserted] = pooled[s].try_emplace(t.query_index, cand);
      if (inserted) continue;
      const Best& cur = it->second;
      if (std::tie(cand.score, cur.image, cur.db_index) > std::tie(cur.score, cand.image, cand.db_index)) {
        it->second = cand;
      }
    }
  }
  std::vector<const Best*> survivors;
  for (std::size_t s = 0; s < out.size(); ++s) {
    survivors.clear();
    for (const auto& [j, b] : pooled[s]) survivors.push_back(&b);
    std::sort(survivors.begin(), survivors.end(), [](const Best* a, const Best* b) { return a->visit < b->visit; });
    double sum = 0.0;
    for (const Best* b : survivors) sum += b->score;
    out[s].score = sum;
  }
  sort_labels(out);
  return out;
}

std::vector<ScoredLabel> image_score_labels(std::span<const ScoredImage> images, const LabelMap& labels) {
  std::vector<ScoredLabel> out;
  const auto slots = label_slots(labels, out);
  const bool any_reranked = reranking_happened(images);
  std::vector<bool> shortlisted(out.size(), false);
  for (const ScoredImage& img : sorted_copy(images)) {
    const auto lit = labels.image_labels.find(img.image_id);
    if (lit == labels.image_labels.end()) continue;
    const std::size_t s = slot_of(slots, lit->second);
    ScoredLabel& l = out[s];
    if (contributes(img, any_reranked)) {
      if (shortlisted[s]) continue;
      shortlisted[s] = true;
      l.best_image_id = img.image_id;
      l.score = img.score();
    } else if (!l.best_image_id) {
      l.best_image_id = img.image_id;
    }
  }
  sort_labels(out);
  return out;
}

}  // namespace stripeid
