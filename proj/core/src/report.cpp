#include "stripeid/report.hpp"

#include <fmt/format.h>

#include <algorithm>

namespace stripeid {
using nlohmann::json;

std::string algorithm_tag(const QueryConfig& c) {
  std::string tag(to_string(c.algorithm));
  if (c.algorithm == Algorithm::kOneVsMany && c.backend == Backend::kPq) tag += "+PQ";
  if (c.K_SR == 0) tag += "+R0";
  if (c.K_SR == kRerankAll) tag += "+RA";
  if (c.descriptor_variant == DescriptorVariant::kSift) tag += "+S";
  return tag;
}

json to_json(const EvalReport& report) {
  json rows = json::array();
  for (const EvalRow& r : report.rows) {
    rows.push_back({{"query_image_id", r.query.value},
                    {"true_label_id", r.true_label.value},
                    {"rank_label", r.rank_label},
                    {"rank_image", r.rank_image},
                    {"seconds", r.seconds}});
  }
  const EvalAggregates& t = report.totals;
  json out = {{"config", to_json(report.config)},
          {"algorithm", algorithm_tag(report.config)},
          {"generation", report.generation},
          {"queries", rows},
          {"aggregates",
           {{"queries", t.queries},
            {"rank_gt1", {{"label", t.label_rank_gt1}, {"image", t.image_rank_gt1}}},
            {"rank_gt5", {{"label", t.label_rank_gt5}, {"image", t.image_rank_gt5}}},
            {"tpq_seconds", t.tpq_seconds}}}};
  if (report.memory) {
    const PoolMemory& m = *report.memory;
    out["memory"] = {{"descriptors", m.descriptors},
                     {"raw_bytes", m.raw_bytes},
                     {"code_bytes", m.code_bytes},
                     {"ratio", m.ratio()}};
  }
  return out;
}

namespace {

json label_list(std::span<const ScoredLabel> labels, const Generation* gen) {
  json out = json::array();
  for (const ScoredLabel& l : labels) {
    json j = {{"label_id", l.label_id.value}, {"score", l.score}};
    j["best_image_id"] = l.best_image_id ? json(l.best_image_id->value) : json(nullptr);
    if (gen) {
      const auto it = gen->label_names.find(l.label_id);
      if (it != gen->label_names.end()) j["name"] = it->second;
    }
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace

json to_json(const RankedResult& result, const Generation* gen, std::size_t max_images) {
  json images = json::array();
  for (std::size_t i = 0; i < std::min(max_images, result.images.size()); ++i) {
    const ScoredImage& s = result.images[i];
    json j = {{"image_id", s.image_id.value}, {"initial_score", s.initial_score}, {"score", s.score()}};
    j["reranked_score"] = s.reranked_score ? json(*s.reranked_score) : json(nullptr);
    j["inliers"] = s.inlier_matches ? json(s.inlier_matches->triples.size()) : json(nullptr);
    if (gen) {
      const auto it = gen->labels.image_labels.find(s.image_id);
      j["label_id"] = it != gen->labels.image_labels.end() ? json(it->second.value) : json(nullptr);
    }
    images.push_back(std::move(j));
  }
  return {{"config", to_json(result.config)},
          {"generation", result.generation},
          {"labels", label_list(result.labels, gen)},
          {"image_scoring_labels", label_list(result.image_labels, gen)},
          {"images", images},
          {"timing", {{"match_seconds", result.match_seconds}, {"total_seconds", result.total_seconds}}}};
}

std::string format_table(std::span<const EvalReport> reports) {
  std::size_t w = std::string_view("Algorithm:").size();
  for (const EvalReport& r : reports) w = std::max(w, algorithm_tag(r.config).size());
  std::string out;
  out += fmt::format("{:<{}}  {:>3}  {:<6} | {:^13} | {:^13} | {:>8}\n", "Algorithm:", w, "k", "delta", "Rank > 1",
                     "Rank > 5", "TPQ");
  out += fmt::format("{:<{}}  {:>3}  {:<6} | {:>6} {:>6} | {:>6} {:>6} | {:>8}\n", "", w, "", "", "label", "image",
                     "label", "image", "(sec)");
  out += std::string(w + 62, '-') + "\n";
  for (const EvalReport& r : reports) {
    const EvalAggregates& t = r.totals;
    out += fmt::format("{:<{}}  {:>3}  {:<6} | {:>6} {:>6} | {:>6} {:>6} | {:>8.3f}\n", algorithm_tag(r.config), w,
                       r.config.k, to_string(r.config.delta), t.label_rank_gt1, t.image_rank_gt1, t.label_rank_gt5,
                       t.image_rank_gt5, t.tpq_seconds);
  }
  for (const EvalReport& r : reports) {
    if (!r.memory) continue;
    const PoolMemory& m = *r.memory;
    out += fmt::format("{}: {} descriptors, raw {} bytes, codes {} bytes, {:.1f}x smaller\n", algorithm_tag(r.config),
                       m.descriptors, m.raw_bytes, m.code_bytes, m.ratio());
  }
  return out;
}

}  // namespace stripeid
