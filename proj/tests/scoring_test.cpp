#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include "stripeid/error.hpp"
#include "stripeid/scoring.hpp"

namespace stripeid {
namespace {

MatchSet set_of(std::uint32_t image, std::vector<MatchTriple> triples) {
  return MatchSet{ImageId{image}, std::move(triples)};
}

TEST(ImageScore, Examples) {
  EXPECT_EQ(image_score(MatchSet{}), 0.0);
  EXPECT_DOUBLE_EQ(image_score(set_of(1, {{0, 0, 2.6}, {1, 1, 3.0}})), 5.6);
}

TEST(ImageScore, MatchesReverseOrderSum) {
  std::mt19937_64 rng(1);
  std::exponential_distribution<double> e(0.5);
  for (int t = 0; t < 100; ++t) {
    MatchSet m;
    const std::size_t n = rng() % 500;
    for (std::uint32_t i = 0; i < n; ++i) m.triples.push_back({i, i, e(rng)});
    double fold = 0.0;
    for (auto it = m.triples.rbegin(); it != m.triples.rend(); ++it) fold += it->score;
    EXPECT_NEAR(image_score(m), fold, 1e-9 * std::max(1.0, fold));
  }
}

TEST(ImageScore, AdditiveOverDisjointSets) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  MatchSet a;
  MatchSet b;
  MatchSet both;
  for (std::uint32_t i = 0; i < 200; ++i) {
    const MatchTriple t{i, i, u(rng)};
    (i % 3 == 0 ? a : b).triples.push_back(t);
    both.triples.push_back(t);
  }
  EXPECT_NEAR(image_score(both), image_score(a) + image_score(b), 1e-9 * image_score(both));
}

TEST(InitialScores, SortedWithIdTieBreak) {
  const std::vector<MatchSet> sets{set_of(5, {{0, 0, 2.0}}), set_of(2, {{0, 0, 2.0}}), set_of(9, {{0, 0, 7.0}}),
                                   set_of(1, {})};
  const auto out = initial_scores(sets);
  ASSERT_EQ(out.size(), 4u);
  EXPECT_EQ(out[0].image_id, ImageId{9});
  EXPECT_EQ(out[1].image_id, ImageId{2});
  EXPECT_EQ(out[2].image_id, ImageId{5});
  EXPECT_EQ(out[3].image_id, ImageId{1});
  EXPECT_FALSE(out[0].reranked_score.has_value());
}

// --- spatial reranking -----------------------------------------------------

EllipseKeypoint keypoint_at(const Eigen::Vector2d& p, const Eigen::Matrix2d& shape) {
  EllipseKeypoint k;
  k.x = static_cast<float>(p.x());
  k.y = static_cast<float>(p.y());
  const AffineShape s = AffineShape::from_covariance(shape * shape.transpose());
  k.shape = s;
  return k;
}

struct RerankCase {
  FeatureSet query;
  FeatureSet db;
  MatchSet matches;
  std::set<std::uint32_t> true_inliers;  // by query index
};

// Query and database features related by a random affine map (rotation up to
// 10 degrees, anisotropic scale, translation); `n_out` matches point at
// database features placed at least `min_outlier_px` away from where the map
// sends the query feature.
RerankCase make_case(std::mt19937_64& rng, int n_in, int n_out, double min_outlier_px) {
  std::uniform_real_distribution<double> pos(0.0, 512.0);
  std::uniform_real_distribution<double> angle(-10.0, 10.0);
  std::uniform_real_distribution<double> scale(0.85, 1.15);
  std::uniform_real_distribution<double> shift(-30.0, 30.0);
  std::uniform_real_distribution<double> radius(2.0, 12.0);
  std::uniform_real_distribution<double> skew(-0.4, 0.4);
  const double a = angle(rng) * std::numbers::pi / 180.0;
  Eigen::Matrix2d rot;
  rot << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  const Eigen::Matrix2d lin = rot * Eigen::Vector2d(scale(rng), scale(rng)).asDiagonal();
  const Eigen::Vector2d t(shift(rng), shift(rng));

  RerankCase c;
  c.query.roi_width = c.query.roi_height = 512;
  c.db.roi_width = c.db.roi_height = 512;
  c.matches.image_id = ImageId{1};
  const int n = n_in + n_out;
  std::vector<Eigen::Vector2d> qpos;
  for (int i = 0; i < n; ++i) {
    Eigen::Matrix2d shape;
    const double r = radius(rng);
    shape << r, 0, skew(rng) * r, r * scale(rng);
    const Eigen::Vector2d x(pos(rng), pos(rng));
    qpos.push_back(x);
    c.query.keypoints.push_back(keypoint_at(x, shape));
    Eigen::Vector2d y = lin * x + t;
    if (i >= n_in) {
      Eigen::Vector2d z;
      do {
        z = Eigen::Vector2d(pos(rng), pos(rng));
      } while ((z - y).norm() < min_outlier_px);
      y = z;
    } else {
      c.true_inliers.insert(static_cast<std::uint32_t>(i));
    }
    c.db.keypoints.push_back(keypoint_at(y, lin * shape));
  }
  c.query.descriptors.resize(c.query.keypoints.size());
  c.db.descriptors.resize(c.db.keypoints.size());
  // Shuffle database feature order so indices carry no information.
  std::vector<std::uint32_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0u);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<EllipseKeypoint> shuffled(c.db.keypoints.size());
  for (int i = 0; i < n; ++i) shuffled[perm[static_cast<std::size_t>(i)]] = c.db.keypoints[static_cast<std::size_t>(i)];
  c.db.keypoints = shuffled;
  std::uniform_real_distribution<double> score(0.5, 3.0);
  for (int i = 0; i < n; ++i) {
    c.matches.triples.push_back({perm[static_cast<std::size_t>(i)], static_cast<std::uint32_t>(i), score(rng)});
  }
  return c;
}

std::vector<ScoredImage> rerank_one(const RerankCase& c, std::size_t k_sr = 50) {
  const std::vector<MatchSet> sets{c.matches};
  return spatial_rerank(c.query, initial_scores(sets), sets,
                        [&](ImageId) -> const FeatureSet& { return c.db; }, k_sr);
}

TEST(SpatialRerank, SixtyConsistentFortyScrambled) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const RerankCase c = make_case(rng, 60, 40, 0.15 * std::hypot(512.0, 512.0));
    const auto out = rerank_one(c);
    ASSERT_TRUE(out[0].inlier_matches.has_value());
    const auto& kept = out[0].inlier_matches->triples;
    EXPECT_GE(kept.size(), 55u);
    EXPECT_LE(kept.size(), 65u);
    for (const auto& t : kept) EXPECT_TRUE(c.true_inliers.count(t.query_index)) << "scrambled match kept";
    EXPECT_DOUBLE_EQ(*out[0].reranked_score, image_score(*out[0].inlier_matches));
  }
}

TEST(SpatialRerank, IdenticalImageKeepsEverything) {
  std::mt19937_64 rng(4);
  RerankCase c = make_case(rng, 50, 0, 0);
  c.db = c.query;
  for (auto& t : c.matches.triples) t.db_index = t.query_index;
  const auto out = rerank_one(c);
  ASSERT_TRUE(out[0].inlier_matches.has_value());
  EXPECT_EQ(*out[0].inlier_matches, c.matches);
  EXPECT_DOUBLE_EQ(*out[0].reranked_score, out[0].initial_score);
}

TEST(SpatialRerank, ZeroBudgetLeavesOrder) {
  std::mt19937_64 rng(5);
  std::vector<MatchSet> sets;
  std::map<ImageId, RerankCase> cases;
  for (std::uint32_t id = 1; id <= 6; ++id) {
    RerankCase c = make_case(rng, 10 + static_cast<int>(id), 20, 100);
    c.matches.image_id = ImageId{id};
    sets.push_back(c.matches);
    cases.emplace(ImageId{id}, std::move(c));
  }
  const auto initial = initial_scores(sets);
  const auto lookup = [&](ImageId id) -> const FeatureSet& { return cases.at(id).db; };
  const auto out = spatial_rerank(cases.begin()->second.query, initial, sets, lookup, 0);
  ASSERT_EQ(out.size(), initial.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_EQ(out[i].image_id, initial[i].image_id);
    EXPECT_FALSE(out[i].reranked_score.has_value());
  }
}

TEST(SpatialRerank, NeverInventsMatchesAndRespectsBudget) {
  std::mt19937_64 rng(6);
  std::vector<MatchSet> sets;
  std::map<ImageId, RerankCase> cases;
  // Every image shares one query geometry so the lookup is consistent.
  const RerankCase proto = make_case(rng, 30, 30, 80);
  for (std::uint32_t id = 1; id <= 10; ++id) {
    RerankCase c = proto;
    c.matches.image_id = ImageId{id};
    std::shuffle(c.matches.triples.begin(), c.matches.triples.end(), rng);
    c.matches.triples.resize(10 + 4 * id);
    sets.push_back(c.matches);
    cases.emplace(ImageId{id}, std::move(c));
  }
  const auto lookup = [&](ImageId id) -> const FeatureSet& { return cases.at(id).db; };
  const auto initial = initial_scores(sets);
  const auto out = spatial_rerank(proto.query, initial, sets, lookup, 4);
  std::size_t reranked = 0;
  for (const auto& img : out) {
    if (!img.reranked_score) continue;
    ++reranked;
    EXPECT_LE(*img.reranked_score, img.initial_score + 1e-12);
    const auto& orig = cases.at(img.image_id).matches.triples;
    for (const auto& t : img.inlier_matches->triples) {
      EXPECT_NE(std::find(orig.begin(), orig.end(), t), orig.end());
    }
  }
  EXPECT_EQ(reranked, 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto it = std::find_if(out.begin(), out.end(), [&](const ScoredImage& s) { return s.image_id == initial[i].image_id; });
    EXPECT_TRUE(it->reranked_score.has_value());
  }
  for (std::size_t i = 1; i < out.size(); ++i) EXPECT_GE(out[i - 1].score(), out[i].score());
  EXPECT_EQ(spatial_rerank(proto.query, initial, sets, lookup, 4).front().image_id, out.front().image_id);
}

TEST(SpatialRerank, FewMatchesUseAffineInliers) {
  std::mt19937_64 rng(7);
  const RerankCase c = make_case(rng, 3, 0, 0);
  const auto out = rerank_one(c);
  EXPECT_EQ(out[0].inlier_matches->triples.size(), 3u);
}

// --- label scoring ---------------------------------------------------------

LabelMap label_map(std::initializer_list<std::pair<std::uint32_t, std::uint32_t>> image_to_label) {
  LabelMap m;
  std::set<std::uint32_t> labels;
  for (auto [img, lab] : image_to_label) {
    m.image_labels[ImageId{img}] = LabelId{lab};
    labels.insert(lab);
  }
  for (auto l : labels) m.labels.push_back(LabelId{l});
  return m;
}

ScoredImage reranked(std::uint32_t id, const MatchSet& inliers, double initial) {
  return ScoredImage{ImageId{id}, initial, image_score(inliers), inliers};
}

TEST(LabelScore, SingleImageLabel) {
  const MatchSet in = set_of(1, {{0, 0, 2.5}, {1, 3, 1.5}});
  const std::vector<ScoredImage> imgs{reranked(1, in, 9.0)};
  const auto labels = label_score(imgs, {}, label_map({{1, 1}}));
  ASSERT_EQ(labels.size(), 1u);
  EXPECT_DOUBLE_EQ(labels[0].score, 4.0);
  EXPECT_EQ(labels[0].best_image_id, ImageId{1});
}

TEST(LabelScore, BestTriplePerQueryFeature) {
  const MatchSet a = set_of(1, {{0, 7, 3.0}});
  const MatchSet b = set_of(2, {{4, 7, 5.0}, {5, 8, 2.0}});
  const std::vector<ScoredImage> imgs{reranked(1, a, 3.0), reranked(2, b, 7.0)};
  const auto labels = label_score(imgs, {}, label_map({{1, 1}, {2, 1}}));
  EXPECT_DOUBLE_EQ(labels.at(0).score, 7.0);
  EXPECT_EQ(labels[0].best_image_id, ImageId{2});
}

TEST(LabelScore, NonRerankedImagesUseInitialMatches) {
  const std::vector<MatchSet> sets{set_of(1, {{0, 0, 1.0}, {1, 1, 2.0}})};
  const std::vector<ScoredImage> imgs = initial_scores(sets);
  const auto labels = label_score(imgs, sets, label_map({{1, 4}}));
  EXPECT_DOUBLE_EQ(labels.at(0).score, 3.0);
}

TEST(LabelScore, OnlyRerankedImagesCountOnceAnyAre) {
  const std::vector<MatchSet> sets{set_of(1, {{0, 0, 4.0}}), set_of(2, {{0, 1, 1.0}, {1, 2, 8.0}}),
                                   set_of(3, {{0, 3, 9.0}})};
  std::vector<ScoredImage> imgs = initial_scores(sets);
  for (auto& img : imgs) {
    if (img.image_id == ImageId{1}) {
      img.inlier_matches = sets[0];
      img.reranked_score = 4.0;
    }
  }
  sort_images(imgs);
  const LabelMap m = label_map({{1, 1}, {2, 1}, {3, 2}});
  for (const auto& labels : {label_score(imgs, sets, m), image_score_labels(imgs, m)}) {
    ASSERT_EQ(labels.size(), 2u);
    EXPECT_EQ(labels[0].label_id, LabelId{1});
    EXPECT_DOUBLE_EQ(labels[0].score, 4.0);
    EXPECT_EQ(labels[0].best_image_id, ImageId{1});
    EXPECT_EQ(labels[1].score, 0.0);
    EXPECT_EQ(labels[1].best_image_id, ImageId{3});
  }
}

TEST(LabelScore, UnknownLabelIsIntegrityError) {
  LabelMap m = label_map({{1, 1}});
  m.image_labels[ImageId{2}] = LabelId{99};
  const std::vector<ScoredImage> imgs{reranked(2, set_of(2, {{0, 0, 1.0}}), 1.0)};
  for (int which = 0; which < 2; ++which) {
    try {
      if (which == 0) {
        (void)label_score(imgs, {}, m);
      } else {
        (void)image_score_labels(imgs, m);
      }
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kCatalogIntegrity);
    }
  }
}

TEST(ImageScoreLabels, BestImageWins) {
  const std::vector<ScoredImage> imgs{{ImageId{1}, 4.0, std::nullopt, std::nullopt},
                                      {ImageId{2}, 9.0, std::nullopt, std::nullopt},
                                      {ImageId{3}, 6.0, std::nullopt, std::nullopt}};
  const auto labels = image_score_labels(imgs, label_map({{1, 1}, {2, 1}, {3, 2}}));
  ASSERT_EQ(labels.size(), 2u);
  EXPECT_EQ(labels[0].label_id, LabelId{1});
  EXPECT_EQ(labels[0].score, 9.0);
  EXPECT_EQ(labels[0].best_image_id, ImageId{2});
  EXPECT_EQ(labels[1].score, 6.0);
}

TEST(ImageScoreLabels, LabelsWithoutImagesAreListedLast) {
  LabelMap m = label_map({{1, 2}});
  m.labels.insert(m.labels.begin(), LabelId{1});
  const std::vector<ScoredImage> imgs{{ImageId{1}, 0.0, std::nullopt, std::nullopt}};
  const auto labels = image_score_labels(imgs, m);
  ASSERT_EQ(labels.size(), 2u);
  EXPECT_EQ(labels[0].label_id, LabelId{2});
  EXPECT_FALSE(labels[1].best_image_id.has_value());
}

struct RandomRanking {
  std::vector<MatchSet> sets;
  std::vector<ScoredImage> images;
  LabelMap labels;
};

// Random match sets over a small query, some images reranked to a random
// subset; scores are drawn from a coarse grid so ties occur.
RandomRanking random_ranking(std::mt19937_64& rng, std::uint32_t n_images, std::uint32_t n_labels,
                             bool one_image_per_label) {
  RandomRanking r;
  std::uniform_int_distribution<int> grid(0, 6);
  std::bernoulli_distribution coin(0.5);
  for (std::uint32_t id = 1; id <= n_images; ++id) {
    MatchSet m{ImageId{id}, {}};
    for (std::uint32_t j = 0; j < 12; ++j) {
      if (coin(rng)) m.triples.push_back({static_cast<std::uint32_t>(rng() % 30), j, 0.5 * grid(rng)});
    }
    r.sets.push_back(m);
    const std::uint32_t label = one_image_per_label ? id : 1 + static_cast<std::uint32_t>(rng() % n_labels);
    r.labels.image_labels[ImageId{id}] = LabelId{label};
  }
  for (std::uint32_t l = 1; l <= (one_image_per_label ? n_images : n_labels); ++l) r.labels.labels.push_back(LabelId{l});
  r.images = initial_scores(r.sets);
  for (auto& img : r.images) {
    if (!coin(rng)) continue;
    MatchSet kept{img.image_id, {}};
    const auto& orig = std::find_if(r.sets.begin(), r.sets.end(), [&](const MatchSet& s) { return s.image_id == img.image_id; })->triples;
    for (const auto& t : orig) {
      if (coin(rng)) kept.triples.push_back(t);
    }
    img.reranked_score = image_score(kept);
    img.inlier_matches = kept;
  }
  sort_images(r.images);
  return r;
}

TEST(LabelScoringProperties, DominatesImageScoring) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 500; ++t) {
    const auto r = random_ranking(rng, 12, 4, false);
    const auto by_label = label_score(r.images, r.sets, r.labels);
    const auto by_image = image_score_labels(r.images, r.labels);
    std::map<LabelId, double> image_score_of;
    for (const auto& l : by_image) image_score_of[l.label_id] = l.score;
    for (const auto& l : by_label) EXPECT_GE(l.score + 1e-12, image_score_of.at(l.label_id));
  }
}

TEST(LabelScoringProperties, TopImageOwnsTopLabelUnderImageScoring) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 500; ++t) {
    const auto r = random_ranking(rng, 10, 5, false);
    const auto by_image = image_score_labels(r.images, r.labels);
    // The best reranked image, or the best image when nothing was reranked.
    auto top = std::find_if(r.images.begin(), r.images.end(), [](const ScoredImage& i) { return i.reranked_score.has_value(); });
    if (top == r.images.end()) top = r.images.begin();
    EXPECT_EQ(by_image.at(0).label_id, r.labels.image_labels.at(top->image_id));
    EXPECT_EQ(by_image[0].best_image_id, top->image_id);
    for (std::size_t i = 1; i < by_image.size(); ++i) EXPECT_GE(by_image[i - 1].score, by_image[i].score);
  }
}

TEST(LabelScoringProperties, OneImagePerLabelRankingsCoincide) {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 500; ++t) {
    const auto r = random_ranking(rng, 15, 0, true);
    const auto by_label = label_score(r.images, r.sets, r.labels);
    const auto by_image = image_score_labels(r.images, r.labels);
    ASSERT_EQ(by_label.size(), by_image.size());
    for (std::size_t i = 0; i < by_label.size(); ++i) {
      EXPECT_EQ(by_label[i].label_id, by_image[i].label_id);
      EXPECT_EQ(by_label[i].score, by_image[i].score);
    }
  }
}

TEST(LabelScoringProperties, Deterministic) {
  std::mt19937_64 rng(11);
  const auto r = random_ranking(rng, 20, 6, false);
  const auto a = label_score(r.images, r.sets, r.labels);
  const auto b = label_score(r.images, r.sets, r.labels);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].label_id, b[i].label_id);
    EXPECT_EQ(a[i].score, b[i].score);
    EXPECT_EQ(a[i].best_image_id, b[i].best_image_id);
  }
}

}  // namespace
}  // namespace stripeid
