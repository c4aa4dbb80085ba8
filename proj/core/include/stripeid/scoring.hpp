#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "stripeid/features.hpp"
#include "stripeid/match_set.hpp"
#include "stripeid/types.hpp"

namespace stripeid {

/// Sum of the triple scores; 0 for an empty set.
double image_score(std::span<const MatchTriple> triples) noexcept;
inline double image_score(const MatchSet& set) noexcept { return image_score(set.triples); }

struct ScoredImage {
  ImageId image_id;
  double initial_score = 0.0;
  std::optional<double> reranked_score;
  /// Spatially consistent subset of the image's matches; set iff reranked.
  std::optional<MatchSet> inlier_matches;

  double score() const noexcept { return reranked_score.value_or(initial_score); }
};

struct ScoredLabel {
  LabelId label_id;
  double score = 0.0;
  std::optional<ImageId> best_image_id;
};

/// Descending score, ties by ascending image id.
void sort_images(std::vector<ScoredImage>& images);
/// Descending score, ties by ascending best image id (labels without images
/// last), then ascending label id.
void sort_labels(std::vector<ScoredLabel>& labels);

/// Scores each match set and returns them sorted.
std::vector<ScoredImage> initial_scores(std::span<const MatchSet> match_sets);

/// K_SR value meaning "rerank every candidate".
inline constexpr std::size_t kRerankAll = std::numeric_limits<std::size_t>::max();

using FeatureLookup = std::function<const FeatureSet&(ImageId)>;

/// Spatial verification of the `k_sr` best candidates. Per candidate, every
/// match proposes an affine hypothesis; the one with the most inliers within
/// t_sp = t_sp_frac * (database ROI diagonal) wins (ties: higher match score,
/// then lower db index). With four or more inliers a homography is fitted to
/// them and its inliers at the same t_sp are kept; otherwise, or if the fit
/// fails, the affine inliers are. Returns all candidates re-sorted by score().
std::vector<ScoredImage> spatial_rerank(const FeatureSet& query, std::vector<ScoredImage> candidates,
                                        std::span<const MatchSet> match_sets,
                                        const FeatureLookup& db_features, std::size_t k_sr,
                                        double t_sp_frac = 0.10);

/// Image-to-label assignment and the full label list. Images absent from
/// `image_labels` are unlabeled and take no part in label ranking.
struct LabelMap {
  std::unordered_map<ImageId, LabelId> image_labels;
  std::vector<LabelId> labels;
};

/// Label scoring: the inlier sets of the label's reranked images are pooled,
/// only the best triple per query feature is kept (ties: lower image id, then
/// lower db index), and the survivors are summed. When nothing was reranked
/// the initial match sets are pooled instead. Labels without a reranked image
/// score 0 and point at their best image. Every label in `labels.labels` is
/// listed. Throws kCatalogIntegrity for an image whose label is not in the list.
std::vector<ScoredLabel> label_score(std::span<const ScoredImage> images,
                                     std::span<const MatchSet> match_sets, const LabelMap& labels);

/// Image scoring: a label scores as its best reranked image (any image when
/// nothing was reranked), with the same fallbacks as label_score.
std::vector<ScoredLabel> image_score_labels(std::span<const ScoredImage> images, const LabelMap& labels);

}  // namespace stripeid
