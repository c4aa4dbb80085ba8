#include "stripeid/engine.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <unordered_map>

#include "stripeid/error.hpp"
#include "stripeid/matching.hpp"

namespace stripeid {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<MatchSet> match_all_one_vs_one(const Generation& gen, const FeatureSet& query,
                                           const QueryConfig& config, std::optional<ImageId> exclude) {
  std::vector<MatchSet> sets;
  if (query.descriptors.size() < 2) {
    for (ImageId id : gen.image_ids()) {
      if (id != exclude) sets.push_back({id, {}});
    }
    return sets;
  }
  auto pool = std::make_shared<DescriptorPool>();
  pool->add_image(ImageId{0}, query.descriptors);
  const KdForest forest = KdForest::build(pool, config.num_trees, config.seed);
  for (const auto& [id, db] : gen.features) {
    if (id == exclude) continue;
    sets.push_back(match_one_vs_one(*db, query, config.t_ratio, forest, config.max_checks, id));
  }
  return sets;
}

std::vector<MatchSet> match_all_one_vs_many(const Generation& gen, const FeatureSet& query,
                                            const QueryConfig& config, std::optional<ImageId> exclude) {
  const auto index = gen.neighbor_index(config.max_checks);
  OneVsManyOptions opts;
  opts.k = static_cast<std::size_t>(config.k);
  opts.fn = config.delta;
  opts.exclude_image = exclude;
  std::vector<MatchSet> found = match_one_vs_many(query, *index, opts);

  // Every database image is a candidate, matched or not.
  std::vector<MatchSet> sets;
  sets.reserve(gen.features.size());
  auto it = found.begin();
  for (const auto& [id, f] : gen.features) {
    if (id == exclude) continue;
    if (it != found.end() && it->image_id == id) {
      sets.push_back(std::move(*it++));
    } else {
      sets.push_back({id, {}});
    }
  }
  return sets;
}

}  // namespace

void check_compatible(const Generation& gen, const QueryConfig& config) {
  if (gen.info.variant != config.descriptor_variant) {
    throw Error(ErrorCode::kIncompatible, "generation " + std::to_string(gen.info.generation) + " holds " +
                                              std::string(to_string(gen.info.variant)) + " descriptors");
  }
  if (config.algorithm == Algorithm::kOneVsMany && gen.info.backend != config.backend) {
    throw Error(ErrorCode::kIncompatible, "generation " + std::to_string(gen.info.generation) + " uses the " +
                                              std::string(to_string(gen.info.backend)) + " backend");
  }
}

RankedResult rank_features(const Generation& gen, const FeatureSet& query, const QueryConfig& config,
                           std::optional<ImageId> exclude) {
  validate(config);
  check_compatible(gen, config);
  if (query.variant != config.descriptor_variant) {
    throw Error(ErrorCode::kIncompatible, "query features are in the wrong descriptor variant");
  }
  const auto t0 = Clock::now();
  const std::vector<MatchSet> sets = config.algorithm == Algorithm::kOneVsOne
                                         ? match_all_one_vs_one(gen, query, config, exclude)
                                         : match_all_one_vs_many(gen, query, config, exclude);

  RankedResult out;
  out.config = config;
  out.generation = gen.info.generation;
  out.images = spatial_rerank(
      query, initial_scores(sets), sets, [&](ImageId id) -> const FeatureSet& { return gen.features_of(id); },
      config.K_SR, config.t_sp_frac);
  out.labels = label_score(out.images, sets, gen.labels);
  out.image_labels = image_score_labels(out.images, gen.labels);
  out.match_seconds = seconds_since(t0);
  out.total_seconds = out.match_seconds;
  return out;
}

RankedResult run_query(const Generation& gen, const GrayImage& image, const Roi& roi, const QueryConfig& config) {
  const auto t0 = Clock::now();
  const FeatureSet query = extract_features(image, roi, config.descriptor_variant);
  RankedResult out = rank_features(gen, query, config);
  out.total_seconds = seconds_since(t0);
  return out;
}

std::size_t rank_of(std::span<const ScoredLabel> labels, LabelId label) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].label_id == label) return i + 1;
  }
  return 0;
}

EvalAggregates aggregate(std::span<const EvalRow> rows) {
  EvalAggregates a;
  a.queries = rows.size();
  double total = 0.0;
  for (const EvalRow& r : rows) {
    a.label_rank_gt1 += r.rank_label != 1;
    a.label_rank_gt5 += r.rank_label == 0 || r.rank_label > 5;
    a.image_rank_gt1 += r.rank_image != 1;
    a.image_rank_gt5 += r.rank_image == 0 || r.rank_image > 5;
    total += r.seconds;
  }
  a.tpq_seconds = rows.empty() ? 0.0 : total / static_cast<double>(rows.size());
  return a;
}

std::vector<ImageId> eligible_queries(const Generation& gen) {
  std::unordered_map<LabelId, std::size_t> multiplicity;
  for (const auto& [image, label] : gen.labels.image_labels) ++multiplicity[label];
  std::vector<ImageId> out;
  for (const auto& [id, f] : gen.features) {
    const auto it = gen.labels.image_labels.find(id);
    if (it != gen.labels.image_labels.end() && multiplicity[it->second] >= 2) out.push_back(id);
  }
  return out;
}

EvalReport run_eval(const Generation& gen, const QueryConfig& config, const EvalOptions& options) {
  validate(config);
  check_compatible(gen, config);
  std::vector<ImageId> queries = eligible_queries(gen);
  if (queries.empty()) throw Error(ErrorCode::kEmptyEval, "no label has two or more images");
  if (queries.size() > options.max_queries && options.max_queries > 0) {
    std::vector<ImageId> subset;
    const std::size_t n = queries.size();
    for (std::size_t i = 0; i < options.max_queries; ++i) subset.push_back(queries[i * n / options.max_queries]);
    queries = std::move(subset);
  }

  EvalReport report;
  report.config = config;
  report.generation = gen.info.generation;
  report.rows.reserve(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const ImageId id = queries[q];
    const LabelId truth = gen.labels.image_labels.at(id);
    const RankedResult r = rank_features(gen, gen.features_of(id), config, id);
    report.rows.push_back({id, truth, rank_of(r.labels, truth), rank_of(r.image_labels, truth), r.match_seconds});
    if (options.progress) options.progress(q + 1, queries.size());
  }
  report.totals = aggregate(report.rows);
  if (config.algorithm == Algorithm::kOneVsMany && config.backend == Backend::kPq && gen.pq) {
    const std::size_t n = gen.pool->size();
    report.memory = PoolMemory{n, n * kDescriptorDim * sizeof(float), gen.pq->code_bytes()};
  }
  spdlog::info("eval {} {} k={}: {} queries, label rank>1 {}, TPQ {:.3f}s", to_string(config.algorithm),
               to_string(config.delta), config.k, report.totals.queries, report.totals.label_rank_gt1,
               report.totals.tpq_seconds);
  return report;
}

}  // namespace stripeid
