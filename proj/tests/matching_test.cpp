#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "stripeid/error.hpp"
#include "stripeid/matching.hpp"
#include "test_util.hpp"

namespace stripeid {
namespace {

using testing::random_descriptors;
using testing::reference_distance_sq;

constexpr ScoringFn kAllFns[] = {ScoringFn::kLnbnn, ScoringFn::kRatio, ScoringFn::kLnrat, ScoringFn::kCount};

FeatureSet features_from(std::vector<Descriptor> ds) {
  FeatureSet fs;
  fs.roi_width = 512;
  fs.roi_height = 512;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EllipseKeypoint k;
    k.x = static_cast<float>(i % 512);
    k.y = static_cast<float>(i / 512);
    fs.keypoints.push_back(k);
  }
  fs.descriptors = std::move(ds);
  return fs;
}

Descriptor axis(std::size_t dim, float length) {
  Descriptor d{};
  d[dim] = length;
  return d;
}

KdForest forest_over(const FeatureSet& fs) {
  auto pool = std::make_shared<DescriptorPool>();
  pool->add_image(ImageId{0}, fs.descriptors);
  return KdForest::build(pool, 4, 0);
}

struct Database {
  std::shared_ptr<DescriptorPool> pool = std::make_shared<DescriptorPool>();
  std::map<ImageId, std::vector<Descriptor>> images;

  void add(std::uint32_t id, std::vector<Descriptor> ds) {
    pool->add_image(ImageId{id}, ds);
    images[ImageId{id}] = std::move(ds);
  }
};

void expect_unique_pairs(const std::vector<MatchSet>& sets) {
  for (const auto& s : sets) {
    std::set<std::pair<std::uint32_t, std::uint32_t>> pairs;
    std::set<std::uint32_t> js;
    for (const auto& t : s.triples) {
      EXPECT_TRUE(pairs.emplace(t.db_index, t.query_index).second);
      EXPECT_TRUE(js.insert(t.query_index).second) << "one triple per (query feature, image)";
      EXPECT_GE(t.score, 0.0);
    }
  }
}

TEST(Delta, NonDistinctLimit) {
  EXPECT_EQ(delta(ScoringFn::kLnbnn, 2, 2), 0.0);
  EXPECT_EQ(delta(ScoringFn::kRatio, 2, 2), 1.0);
  EXPECT_EQ(delta(ScoringFn::kLnrat, 2, 2), 0.0);
  EXPECT_EQ(delta(ScoringFn::kCount, 2, 2), 1.0);
}

TEST(Delta, AnalyticValues) {
  EXPECT_DOUBLE_EQ(delta(ScoringFn::kLnbnn, 1, 4), 3.0);
  EXPECT_DOUBLE_EQ(delta(ScoringFn::kRatio, 1, 4), 4.0);
  EXPECT_NEAR(delta(ScoringFn::kLnrat, 1, 4), 1.3863, 1e-4);
  EXPECT_DOUBLE_EQ(delta(ScoringFn::kCount, 1, 4), 1.0);
}

TEST(Delta, ZeroDistanceIsGuarded) {
  const double r = delta(ScoringFn::kRatio, 0, 9);
  EXPECT_TRUE(std::isfinite(r));
  EXPECT_DOUBLE_EQ(r, 9.0 / kDistanceEpsilon);
  EXPECT_TRUE(std::isfinite(delta(ScoringFn::kLnrat, 0, 9)));
  EXPECT_EQ(delta(ScoringFn::kRatio, 0, 0), 1.0);
  EXPECT_EQ(delta(ScoringFn::kLnrat, 0, 0), 0.0);
}

TEST(Delta, ContractViolations) {
  for (ScoringFn fn : kAllFns) {
    for (auto [p, n] : {std::pair{3.0, 2.0}, {-1.0, 2.0}, {-2.0, -1.0}}) {
      try {
        (void)delta(fn, p, n);
        FAIL() << to_string(fn);
      } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kContract);
      }
    }
  }
}

TEST(Delta, PropertiesOverRandomPairs) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 4.0);
  std::bernoulli_distribution edge(0.05);
  for (int t = 0; t < 100000; ++t) {
    double p = edge(rng) ? 0.0 : u(rng);
    double n = edge(rng) ? p : p + u(rng);
    const double lnbnn = delta(ScoringFn::kLnbnn, p, n);
    const double ratio = delta(ScoringFn::kRatio, p, n);
    const double lnrat = delta(ScoringFn::kLnrat, p, n);
    ASSERT_GE(lnbnn, 0.0);
    ASSERT_GE(ratio, 1.0);
    ASSERT_GE(lnrat, 0.0);
    ASSERT_EQ(delta(ScoringFn::kCount, p, n), 1.0);
    ASSERT_EQ(lnrat, std::log(ratio));
  }
}

TEST(ScoringFnNames, ParseRoundTrip) {
  for (ScoringFn fn : kAllFns) EXPECT_EQ(parse_scoring_fn(to_string(fn)), fn);
  EXPECT_EQ(parse_scoring_fn("LNBNN"), ScoringFn::kLnbnn);
  EXPECT_THROW((void)parse_scoring_fn("bogus"), Error);
}

TEST(OneVsOne, DistinctiveMatchKept) {
  // Database descriptor at the origin; query neighbors at squared distances 1 and 4.
  const FeatureSet db = features_from({Descriptor{}});
  const FeatureSet q = features_from({axis(0, 1.0f), axis(1, 2.0f)});
  const MatchSet m = match_one_vs_one(db, q, 2.56, forest_over(q));
  ASSERT_EQ(m.triples.size(), 1u);
  EXPECT_EQ(m.triples[0].db_index, 0u);
  EXPECT_EQ(m.triples[0].query_index, 0u);
  EXPECT_DOUBLE_EQ(m.triples[0].score, 4.0);
}

TEST(OneVsOne, EquidistantRejected) {
  const FeatureSet db = features_from({Descriptor{}});
  const FeatureSet q = features_from({axis(0, 1.0f), axis(1, 1.0f)});
  EXPECT_TRUE(match_one_vs_one(db, q, 2.56, forest_over(q)).triples.empty());
}

TEST(OneVsOne, SelfMatchKeepsEveryFeature) {
  const FeatureSet fs = features_from(random_descriptors(300, 2));
  const MatchSet m = match_one_vs_one(fs, fs, 2.56, forest_over(fs), 128, ImageId{5});
  EXPECT_EQ(m.image_id, ImageId{5});
  ASSERT_EQ(m.triples.size(), fs.size());
  for (const auto& t : m.triples) {
    EXPECT_EQ(t.db_index, t.query_index);
    EXPECT_GT(t.score, 1e6);
    EXPECT_TRUE(std::isfinite(t.score));
  }
}

TEST(OneVsOne, TooFewQueryDescriptors) {
  const FeatureSet db = features_from(random_descriptors(10, 3));
  const FeatureSet q = features_from(random_descriptors(1, 4));
  EXPECT_TRUE(match_one_vs_one(db, q, 2.56, forest_over(q)).triples.empty());
}

TEST(OneVsMany, RatioSingleNeighbor) {
  Database db;
  db.add(1, {axis(0, 1.0f)});
  db.add(2, {axis(1, 2.0f)});
  const FeatureSet q = features_from({Descriptor{}});
  ExhaustiveNeighborIndex index(db.pool);
  const auto sets = match_one_vs_many(q, index, {.k = 1, .fn = ScoringFn::kRatio});
  ASSERT_EQ(sets.size(), 1u);
  EXPECT_EQ(sets[0].image_id, ImageId{1});
  ASSERT_EQ(sets[0].triples.size(), 1u);
  EXPECT_DOUBLE_EQ(sets[0].triples[0].score, 4.0);
}

TEST(OneVsMany, LnbnnTwoNeighbors) {
  Database db;
  db.add(1, {axis(0, 1.0f)});
  db.add(2, {axis(1, std::sqrt(2.0f))});
  db.add(3, {axis(2, std::sqrt(5.0f))});
  const FeatureSet q = features_from({Descriptor{}});
  ExhaustiveNeighborIndex index(db.pool);
  const auto sets = match_one_vs_many(q, index, {.k = 2, .fn = ScoringFn::kLnbnn});
  ASSERT_EQ(sets.size(), 2u);
  EXPECT_EQ(sets[0].image_id, ImageId{1});
  EXPECT_NEAR(sets[0].triples.at(0).score, 4.0, 1e-6);
  EXPECT_EQ(sets[1].image_id, ImageId{2});
  EXPECT_NEAR(sets[1].triples.at(0).score, 3.0, 1e-6);
}

TEST(OneVsMany, SameImageNeighborsVoteOnce) {
  Database db;
  db.add(1, {axis(0, 1.0f), axis(1, 1.1f)});
  db.add(2, {axis(2, 3.0f)});
  const FeatureSet q = features_from({Descriptor{}});
  ExhaustiveNeighborIndex index(db.pool);
  const auto sets = match_one_vs_many(q, index, {.k = 2, .fn = ScoringFn::kLnbnn});
  ASSERT_EQ(sets.size(), 1u);
  ASSERT_EQ(sets[0].triples.size(), 1u);
  EXPECT_EQ(sets[0].triples[0].db_index, 0u);
  EXPECT_NEAR(sets[0].triples[0].score, 9.0 - 1.0, 1e-6);
}

TEST(OneVsMany, SingleImageDatabaseMirrorsOneVsOne) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto base = random_descriptors(200, rng());
    // Half of the query is a perturbed copy of the database image.
    std::vector<Descriptor> qd = random_descriptors(150, rng());
    std::normal_distribution<float> jitter(0.0f, 0.05f);
    for (std::size_t j = 0; j < 100; ++j) {
      qd[j] = base[j * 2];
      for (float& v : qd[j]) v += jitter(rng);
    }
    const FeatureSet dbf = features_from(base);
    const FeatureSet qf = features_from(qd);
    Database db;
    db.add(9, base);
    ExhaustiveNeighborIndex index(db.pool);
    const auto many = match_one_vs_many(qf, index, {.k = 1, .fn = ScoringFn::kRatio});
    // Reversed roles: the query plays the database image.
    const MatchSet one = match_one_vs_one(qf, dbf, 2.56, forest_over(dbf));
    std::map<std::pair<std::uint32_t, std::uint32_t>, double> from_one;
    for (const auto& t : one.triples) from_one[{t.query_index, t.db_index}] = t.score;
    std::map<std::pair<std::uint32_t, std::uint32_t>, double> from_many;
    ASSERT_EQ(many.size(), 1u);
    for (const auto& t : many[0].triples) {
      if (t.score > 2.56) from_many[{t.db_index, t.query_index}] = t.score;
    }
    ASSERT_EQ(from_one.size(), from_many.size());
    ASSERT_GE(from_one.size(), 80u);
    for (const auto& [key, score] : from_one) {
      ASSERT_TRUE(from_many.count(key));
      EXPECT_NEAR(from_many[key], score, 1e-6 * score);
    }
  }
}

TEST(OneVsMany, CountScoresEqualNearestNeighborTallies) {
  Database db;
  std::mt19937_64 rng(6);
  for (std::uint32_t id = 1; id <= 8; ++id) db.add(id, random_descriptors(150 + id * 20, rng()));
  const FeatureSet q = features_from(random_descriptors(400, 7));
  ExhaustiveNeighborIndex index(db.pool);
  const auto sets = match_one_vs_many(q, index, {.k = 1, .fn = ScoringFn::kCount});
  std::map<ImageId, double> tally;
  for (const auto& d : q.descriptors) {
    double best = 1e300;
    ImageId owner;
    for (const auto& [id, ds] : db.images) {
      for (const auto& v : ds) {
        const double dist = reference_distance_sq(v.data(), d.data());
        if (dist < best) {
          best = dist;
          owner = id;
        }
      }
    }
    tally[owner] += 1.0;
  }
  std::map<ImageId, double> scored;
  for (const auto& s : sets) {
    double sum = 0.0;
    for (const auto& t : s.triples) sum += t.score;
    scored[s.image_id] = sum;
  }
  EXPECT_EQ(scored, tally);
}

TEST(OneVsMany, ScalingDescriptors) {
  Database db;
  Database db2;
  std::mt19937_64 rng(8);
  for (std::uint32_t id = 1; id <= 5; ++id) {
    auto ds = random_descriptors(100, rng());
    auto scaled = ds;
    for (auto& d : scaled) {
      for (float& v : d) v *= 2.0f;
    }
    db.add(id, ds);
    db2.add(id, scaled);
  }
  auto qd = random_descriptors(120, 9);
  auto qd2 = qd;
  for (auto& d : qd2) {
    for (float& v : d) v *= 2.0f;
  }
  ExhaustiveNeighborIndex i1(db.pool);
  ExhaustiveNeighborIndex i2(db2.pool);
  for (ScoringFn fn : kAllFns) {
    const auto a = match_one_vs_many(features_from(qd), i1, {.k = 3, .fn = fn});
    const auto b = match_one_vs_many(features_from(qd2), i2, {.k = 3, .fn = fn});
    ASSERT_EQ(a.size(), b.size());
    const double factor = fn == ScoringFn::kLnbnn ? 4.0 : 1.0;
    for (std::size_t s = 0; s < a.size(); ++s) {
      ASSERT_EQ(a[s].image_id, b[s].image_id);
      ASSERT_EQ(a[s].triples.size(), b[s].triples.size());
      for (std::size_t t = 0; t < a[s].triples.size(); ++t) {
        EXPECT_EQ(a[s].triples[t].db_index, b[s].triples[t].db_index);
        EXPECT_EQ(a[s].triples[t].query_index, b[s].triples[t].query_index);
        EXPECT_NEAR(b[s].triples[t].score, factor * a[s].triples[t].score, 1e-9 * (1.0 + b[s].triples[t].score));
      }
    }
  }
}

TEST(OneVsMany, ExclusionEqualsRemovingTheImage) {
  Database with;
  Database without;
  std::mt19937_64 rng(10);
  const auto self = random_descriptors(200, 11);
  for (std::uint32_t id = 1; id <= 6; ++id) {
    const auto ds = id == 3 ? self : random_descriptors(150, rng());
    with.add(id, ds);
    if (id != 3) without.add(id, ds);
  }
  // Query is the excluded image itself: every first neighbor is its own copy.
  const FeatureSet q = features_from(self);
  ExhaustiveNeighborIndex full(with.pool);
  ExhaustiveNeighborIndex reduced(without.pool);
  for (std::size_t k : {1u, 2u, 5u}) {
    OneVsManyOptions o{.k = k, .fn = ScoringFn::kLnrat, .exclude_image = ImageId{3}};
    const auto a = match_one_vs_many(q, full, o);
    const auto b = match_one_vs_many(q, reduced, {.k = k, .fn = ScoringFn::kLnrat});
    EXPECT_EQ(a, b) << "k " << k;
    for (const auto& s : a) EXPECT_NE(s.image_id, ImageId{3});
    expect_unique_pairs(a);
  }
  // Same with an approximate backend that has to refetch.
  auto forest = std::make_shared<const KdForest>(KdForest::build(with.pool, 4, 0));
  ForestNeighborIndex fi(forest, kUnlimitedChecks);
  OneVsManyOptions o{.k = 4, .fn = ScoringFn::kLnrat, .exclude_image = ImageId{3}, .pad = 0};
  EXPECT_EQ(match_one_vs_many(q, fi, o), match_one_vs_many(q, reduced, {.k = 4, .fn = ScoringFn::kLnrat}));
}

TEST(OneVsMany, InsufficientDatabase) {
  Database db;
  db.add(1, random_descriptors(2, 12));
  db.add(2, random_descriptors(3, 13));
  ExhaustiveNeighborIndex index(db.pool);
  const FeatureSet q = features_from(random_descriptors(4, 14));
  EXPECT_NO_THROW((void)match_one_vs_many(q, index, {.k = 4}));
  for (OneVsManyOptions o : {OneVsManyOptions{.k = 5}, OneVsManyOptions{.k = 2, .exclude_image = ImageId{2}}}) {
    try {
      (void)match_one_vs_many(q, index, o);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kInsufficientDatabase);
    }
  }
}

TEST(OneVsMany, OrderedAndUnique) {
  Database db;
  std::mt19937_64 rng(15);
  for (std::uint32_t id : {9u, 2u, 5u, 7u}) db.add(id, random_descriptors(100, rng()));
  const FeatureSet q = features_from(random_descriptors(200, 16));
  auto forest = std::make_shared<const KdForest>(KdForest::build(db.pool, 4, 1));
  ForestNeighborIndex index(forest, 128);
  for (ScoringFn fn : kAllFns) {
    const auto sets = match_one_vs_many(q, index, {.k = 5, .fn = fn});
    for (std::size_t i = 1; i < sets.size(); ++i) EXPECT_LT(sets[i - 1].image_id, sets[i].image_id);
    for (const auto& s : sets) {
      for (std::size_t t = 1; t < s.triples.size(); ++t) {
        EXPECT_LT(s.triples[t - 1].query_index, s.triples[t].query_index);
      }
    }
    expect_unique_pairs(sets);
    EXPECT_EQ(sets, match_one_vs_many(q, index, {.k = 5, .fn = fn}));
  }
}

}  // namespace
}  // namespace stripeid
