// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "stripeid/ann_index.hpp"
#include "stripeid/catalog.hpp"
#include "stripeid/engine.hpp"
#include "stripeid/features.hpp"
#include "stripeid/geometry.hpp"
#include "stripeid/matching.hpp"
#include "stripeid/scoring.hpp"
#include "stripeid/synthetic.hpp"
#include "test_util.hpp"

namespace stripeid {
namespace {

using Clock = std::chrono::steady_clock;
using testing::TempDir;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& run) {
  Outcome o;
  const auto t0 = Clock::now();
  try {
    o = run();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  fmt::print("{} {} ({}; {:.1f}s)\n", o.pass ? "PASS" : "FAIL", name, o.detail, seconds_since(t0));
  std::fflush(stdout);
}

double accuracy(std::size_t failed, std::size_t total) {
  return 1.0 - static_cast<double>(failed) / static_cast<double>(total);
}

// --- oracle exactness ------------------------------------------------------

Outcome oracle_exactness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::size_t checks = 0;
  std::size_t mismatches = 0;
  for (int p = 0; p < 20; ++p) {
    const std::size_t n = 1 + rng() % 5000;
    const auto pool = testing::random_pool(n, rng());
    const auto forest = KdForest::build(pool, 4, rng());
    for (const auto& q : testing::random_descriptors(20, rng())) {
      for (std::size_t k : {1u, 5u, 21u}) {
        const NeighborList got = forest.search(testing::view(q), k, kUnlimitedChecks);
        const NeighborList want = brute_force_knn(*pool, testing::view(q), k);
        auto a = got.distances_sq;
        auto b = want.distances_sq;
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        ++checks;
        mismatches += a != b;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 60.0,
          fmt::format("{} searches, {} mismatches, {:.1f}s of 60s", checks, mismatches, secs)};
}

// --- scoring identities ----------------------------------------------------

Outcome scoring_identities() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 4.0);
  std::size_t bad = 0;
  for (int i = 0; i < 100000; ++i) {
    double p = u(rng);
    double n = u(rng);
    if (p > n) std::swap(p, n);
    if (i % 1000 == 0) p = 0.0;
    if (i % 1000 == 1) p = n;
    const double lnbnn = delta(ScoringFn::kLnbnn, p, n);
    const double ratio = delta(ScoringFn::kRatio, p, n);
    const double lnrat = delta(ScoringFn::kLnrat, p, n);
    const double count = delta(ScoringFn::kCount, p, n);
    bad += !(lnrat == std::log(ratio)) || !(lnbnn >= 0.0) || count != 1.0;
  }
  const bool limit = delta(ScoringFn::kLnbnn, 2, 2) == 0.0 && delta(ScoringFn::kRatio, 2, 2) == 1.0 &&
                     delta(ScoringFn::kLnrat, 2, 2) == 0.0 && delta(ScoringFn::kCount, 2, 2) == 1.0;
  return {bad == 0 && limit, fmt::format("1e5 pairs, {} failures, delta(2,2) limit {}", bad, limit ? "ok" : "wrong")};
}

// --- RootSIFT --------------------------------------------------------------

Outcome rootsift_contract() {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::bernoulli_distribution sparse(0.4);
  std::size_t bad = 0;
  double worst = 0.0;
  for (int t = 0; t < 10000; ++t) {
    Descriptor s{};
    if (t % 500 != 0) {
      for (float& v : s) v = sparse(rng) ? 0.0f : u(rng);
    }
    const Descriptor r = root_sift(s);
    double l1 = 0.0;
    for (float v : s) l1 += v;
    double n2 = 0.0;
    double dev = 0.0;
    for (std::size_t i = 0; i < kDescriptorDim; ++i) {
      n2 += static_cast<double>(r[i]) * r[i];
      const double expect = l1 > 0.0 ? std::sqrt(s[i] / l1) : 0.0;
      dev = std::max(dev, std::abs(r[i] - expect));
    }
    const double norm_err = l1 > 0.0 ? std::abs(std::sqrt(n2) - 1.0) : std::sqrt(n2);
    worst = std::max(worst, norm_err);
    bad += norm_err > 1e-6 || dev > 1e-6;
  }
  return {bad == 0, fmt::format("1e4 vectors, {} failures, worst norm error {:.2e}", bad, worst)};
}

// --- spatial reranking -----------------------------------------------------

EllipseKeypoint keypoint(const Eigen::Vector2d& p, const Eigen::Matrix2d& frame) {
  EllipseKeypoint k;
  k.x = static_cast<float>(p.x());
  k.y = static_cast<float>(p.y());
  k.shape = AffineShape::from_covariance(frame * frame.transpose());
  return k;
}

Outcome rerank_recovery() {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> px(0.0, 512.0);
  std::uniform_real_distribution<double> py(0.0, 384.0);
  std::uniform_real_distribution<double> angle(-10.0, 10.0);
  std::uniform_real_distribution<double> scale(0.8, 1.25);
  std::uniform_real_distribution<double> shift(-50.0, 50.0);
  std::uniform_real_distribution<double> radius(2.0, 15.0);
  std::uniform_real_distribution<double> skew(-0.5, 0.5);
  std::uniform_real_distribution<double> score(0.1, 3.0);
  const double t_sp = 0.10 * std::hypot(512.0, 384.0);

  std::size_t kept_total = 0;
  std::size_t kept_true = 0;
  std::size_t true_total = 0;
  double worst_precision = 1.0;
  double worst_recall = 1.0;
  for (int trial = 0; trial < 100; ++trial) {
    const double a = angle(rng) * std::numbers::pi / 180.0;
    Eigen::Matrix2d rot;
    rot << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
    Eigen::Matrix2d lin = rot * Eigen::Vector2d(scale(rng), scale(rng)).asDiagonal();
    const Eigen::Vector2d t(shift(rng), shift(rng));

    FeatureSet q;
    FeatureSet db;
    q.roi_width = db.roi_width = 512;
    q.roi_height = db.roi_height = 384;
    MatchSet m{ImageId{1}, {}};
    std::set<std::uint32_t> truth;
    for (std::uint32_t i = 0; i < 100; ++i) {
      const double r = radius(rng);
      Eigen::Matrix2d frame;
      frame << r, 0.0, skew(rng) * r, r * scale(rng);
      const Eigen::Vector2d x(px(rng), py(rng));
      Eigen::Vector2d y = lin * x + t;
      Eigen::Matrix2d db_frame = lin * frame;
      if (i % 5 < 3) {
        truth.insert(i);
      } else {
        Eigen::Vector2d z;
        do {
          z = Eigen::Vector2d(px(rng), py(rng));
        } while ((z - y).norm() <= t_sp);
        y = z;
        const double ra = radius(rng);
        db_frame << ra, 0.0, skew(rng) * ra, ra * scale(rng);
      }
      q.keypoints.push_back(keypoint(x, frame));
      db.keypoints.push_back(keypoint(y, db_frame));
      m.triples.push_back({i, i, score(rng)});
    }
    q.descriptors.resize(q.keypoints.size());
    db.descriptors.resize(db.keypoints.size());
    const std::vector<MatchSet> sets{m};
    const auto out = spatial_rerank(q, initial_scores(sets), sets, [&](ImageId) -> const FeatureSet& { return db; }, 50);
    std::size_t hit = 0;
    for (const MatchTriple& tr : out.at(0).inlier_matches.value().triples) hit += truth.count(tr.query_index);
    const std::size_t kept = out[0].inlier_matches->triples.size();
    kept_total += kept;
    kept_true += hit;
    true_total += truth.size();
    worst_precision = std::min(worst_precision, kept ? static_cast<double>(hit) / kept : 0.0);
    worst_recall = std::min(worst_recall, static_cast<double>(hit) / truth.size());
  }
  const double precision = kept_total ? static_cast<double>(kept_true) / kept_total : 0.0;
  const double recall = static_cast<double>(kept_true) / true_total;
  return {precision >= 0.95 && recall >= 0.9,
          fmt::format("precision {:.4f} (worst trial {:.3f}), recall {:.4f} (worst trial {:.3f}) over 100 trials",
                      precision, worst_precision, recall, worst_recall)};
}

// --- homography ------------------------------------------------------------

Outcome homography_recovery() {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> pos(0.0, 512.0);
  int ok = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::Matrix3d h;
    const double a = u(rng) * 0.5;
    const double s = 1.0 + 0.3 * u(rng);
    h << s * std::cos(a) + 0.1 * u(rng), -s * std::sin(a) + 0.1 * u(rng), 60.0 * u(rng),
        s * std::sin(a) + 0.1 * u(rng), s * std::cos(a) + 0.1 * u(rng), 60.0 * u(rng), 4e-4 * u(rng), 4e-4 * u(rng), 1.0;
    const int n = 4 + static_cast<int>(rng() % 60);
    std::vector<PointPair> pairs;
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector3d x(pos(rng), pos(rng), 1.0);
      const Eigen::Vector3d y = h * x;
      pairs.push_back({x.head<2>(), y.head<2>() / y.z()});
    }
    const Homography est = estimate_homography(pairs);
    double err = 0.0;
    for (const PointPair& p : pairs) {
      const Eigen::Vector3d y = est.h * p.from.homogeneous();
      err = std::max(err, (y.head<2>() / y.z() - p.to).norm());
    }
    worst = std::max(worst, err);
    ok += err < 1e-6;
  }
  return {ok == 100, fmt::format("{}/100 trials below 1e-6 px, worst {:.2e} px", ok, worst)};
}

// --- synthetic catalog criteria --------------------------------------------

struct SyntheticRun {
  TempDir dir;
  std::unique_ptr<Catalog> catalog;
  std::shared_ptr<const Generation> kd;
  EvalReport kd_default;
  double build_seconds = 0.0;
};

Outcome synthetic_identification(SyntheticRun& run) {
  const auto t0 = Clock::now();
  run.catalog = gen_synthetic(SynthParams{}, run.dir.path() / "synthetic");
  (void)run.catalog->build_generation({});
  run.kd = run.catalog->current();
  run.build_seconds = seconds_since(t0);
  QueryConfig c;  // 1vM, k=1, lnrat, K_SR=50, RootSIFT
  run.kd_default = run_eval(*run.kd, c);
  const double secs = seconds_since(t0);
  const EvalAggregates& a = run.kd_default.totals;
  const double top1 = accuracy(a.label_rank_gt1, a.queries);
  const double top5 = accuracy(a.label_rank_gt5, a.queries);
  return {top1 >= 0.90 && top5 >= 0.97 && secs < 600.0,
          fmt::format("{} queries, top-1 {:.1f}%, top-5 {:.1f}%, {:.0f}s of 600s", a.queries, 100 * top1, 100 * top5,
                      secs)};
}

Outcome speed_separation(const SyntheticRun& run) {
  QueryConfig one;
  one.algorithm = Algorithm::kOneVsOne;
  EvalOptions opts;
  opts.max_queries = 15;
  const EvalReport r = run_eval(*run.kd, one, opts);
  const double many = run.kd_default.totals.tpq_seconds;
  const double single = r.totals.tpq_seconds;
  return {many <= 0.25 * single,
          fmt::format("TPQ 1vM {:.4f}s over {} queries, 1v1 {:.3f}s over {} queries, ratio {:.4f}", many,
                      run.kd_default.totals.queries, single, r.totals.queries, many / single)};
}

Outcome pq_behavior(SyntheticRun& run) {
  QueryConfig kd5;
  kd5.delta = ScoringFn::kLnbnn;
  kd5.k = 5;
  const EvalReport kd_r = run_eval(*run.kd, kd5);

  BuildParams p;
  p.backend = Backend::kPq;
  (void)run.catalog->build_generation(p);
  const auto pq = run.catalog->current();
  QueryConfig pq5 = kd5;
  pq5.backend = Backend::kPq;
  QueryConfig pq1 = pq5;
  pq1.k = 1;
  const EvalReport r5 = run_eval(*pq, pq5);
  const EvalReport r1 = run_eval(*pq, pq1);

  const double acc_kd_default = accuracy(run.kd_default.totals.label_rank_gt1, run.kd_default.totals.queries);
  const double acc_kd5 = accuracy(kd_r.totals.label_rank_gt1, kd_r.totals.queries);
  const double acc5 = accuracy(r5.totals.label_rank_gt1, r5.totals.queries);
  const double acc1 = accuracy(r1.totals.label_rank_gt1, r1.totals.queries);
  const std::size_t bytes = pq->pq->code_bytes();
  const std::size_t count = pq->pool->size();
  const bool close = std::abs(acc5 - acc_kd5) <= 0.10 && std::abs(acc5 - acc_kd_default) <= 0.10;
  return {close && acc5 > acc1 && bytes == 16 * count && pq->pq->codes().size() == count,
          fmt::format("top-1 PQ k=5 {:.1f}%, PQ k=1 {:.1f}%, kd k=5 {:.1f}%, kd default {:.1f}%; code bytes {} for {} "
                      "descriptors",
                      100 * acc5, 100 * acc1, 100 * acc_kd5, 100 * acc_kd_default, bytes, count)};
}

// --- scoring-mode consistency ----------------------------------------------

Outcome scoring_mode_consistency() {
  TempDir dir;
  SynthParams sp;
  sp.n_labels = 25;
  sp.images_per_label = 2;
  sp.width = 320;
  sp.height = 240;
  sp.seed = 21;
  const auto source = gen_synthetic(sp, dir.path() / "source");

  // One image per label; the other sighting of each label is a query.
  Catalog single(dir.path() / "single");
  std::vector<ImageRecord> queries;
  for (const ImageRecord& rec : source->images()) {
    const auto name = source->label(*rec.label_id)->name;
    if (rec.source_uri.ends_with("_0.pgm")) {
      (void)single.add_image_file(source->dir() / rec.source_uri, std::nullopt, name);
    } else {
      queries.push_back(rec);
    }
  }
  (void)single.build_generation({});
  const auto gen = single.current();

  std::mt19937_64 rng(23);
  const ScoringFn fns[] = {ScoringFn::kLnbnn, ScoringFn::kRatio, ScoringFn::kLnrat, ScoringFn::kCount};
  const std::size_t budgets[] = {0, 3, 10, 50, kRerankAll};
  int identical = 0;
  for (int e = 0; e < 50; ++e) {
    QueryConfig c;
    c.algorithm = rng() % 5 == 0 ? Algorithm::kOneVsOne : Algorithm::kOneVsMany;
    c.k = 1 + static_cast<int>(rng() % 5);
    c.delta = fns[rng() % 4];
    c.K_SR = budgets[rng() % 5];
    const ImageRecord& q = queries[rng() % queries.size()];
    const GrayImage img = load_image(source->dir() / q.source_uri);
    const int w = 160 + static_cast<int>(rng() % 160);
    const int h = 120 + static_cast<int>(rng() % 120);
    const Roi roi{static_cast<int>(rng() % static_cast<unsigned>(320 - w + 1)),
                  static_cast<int>(rng() % static_cast<unsigned>(240 - h + 1)), w, h};
    const RankedResult r = run_query(*gen, img, roi, c);
    bool same = r.labels.size() == r.image_labels.size();
    for (std::size_t i = 0; same && i < r.labels.size(); ++i) {
      same = r.labels[i].label_id == r.image_labels[i].label_id && r.labels[i].score == r.image_labels[i].score;
    }
    identical += same;
  }
  return {identical == 50, fmt::format("{}/50 evals with identical label and image rankings", identical)};
}

}  // namespace
}  // namespace stripeid

int main() {
  using namespace stripeid;
  spdlog::set_level(spdlog::level::warn);
  report("oracle-exactness", oracle_exactness);
  report("scoring-identities", scoring_identities);
  report("rootsift-contract", rootsift_contract);
  report("spatial-rerank-recovery", rerank_recovery);
  report("homography-recovery", homography_recovery);
  SyntheticRun run;
  report("synthetic-identification", [&] { return synthetic_identification(run); });
  report("speed-separation", [&] {
    if (!run.kd) return Outcome{false, "synthetic catalog unavailable"};
    return speed_separation(run);
  });
  report("pq-behavior", [&] {
    if (!run.kd) return Outcome{false, "synthetic catalog unavailable"};
    return pq_behavior(run);
  });
  report("scoring-mode-consistency", scoring_mode_consistency);
  fmt::print("{} of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
