// stripeid: command line front end for ingesting, indexing, querying,
// evaluating and serving an instance-recognition catalog.

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>

#include "stripeid/catalog.hpp"
#include "stripeid/engine.hpp"
#include "stripeid/error.hpp"
#include "stripeid/report.hpp"
#include "stripeid/service.hpp"
#include "stripeid/synthetic.hpp"

namespace fs = std::filesystem;
using namespace stripeid;

namespace {

// Raw flag values; empty means "not given".
struct ConfigFlags {
  std::string algorithm, delta, K_SR, descriptor_variant, backend, max_checks;
  std::optional<int> k, num_trees;
  std::optional<double> t_ratio, t_sp_frac;
  std::optional<std::uint64_t> seed;
};

void add_config_flags(CLI::App* app, ConfigFlags& f) {
  app->add_option("--algorithm", f.algorithm, "1v1 or 1vM")->check(CLI::IsMember({"1v1", "1vM", "1vm"}));
  app->add_option("--k", f.k, "Neighbors scored per query descriptor");
  app->add_option("--delta", f.delta, "lnbnn, ratio, lnrat or count");
  app->add_option("--t_ratio", f.t_ratio, "One-vs-one ratio threshold");
  app->add_option("--K_SR", f.K_SR, "Images to rerank (0 = none, inf = all)");
  app->add_option("--t_sp_frac", f.t_sp_frac, "Inlier threshold as a fraction of the ROI diagonal");
  app->add_option("--descriptor_variant", f.descriptor_variant, "sift or rootsift");
  app->add_option("--backend", f.backend, "kdforest or pq");
  app->add_option("--num_trees", f.num_trees, "Trees in one-vs-one query forests");
  app->add_option("--max_checks", f.max_checks, "Forest search budget (inf = exact)");
  app->add_option("--seed", f.seed, "Seed for query forests");
}

QueryConfig resolve(const ConfigFlags& f, const Generation* gen) {
  QueryConfig c;
  if (gen) {
    c.descriptor_variant = gen->info.variant;
    c.backend = gen->info.backend;
    c.max_checks = gen->info.max_checks;
  }
  if (!f.algorithm.empty()) c.algorithm = parse_algorithm(f.algorithm);
  if (f.k) c.k = *f.k;
  if (!f.delta.empty()) c.delta = parse_scoring_fn(f.delta);
  if (f.t_ratio) c.t_ratio = *f.t_ratio;
  if (!f.K_SR.empty()) c.K_SR = parse_count(f.K_SR);
  if (f.t_sp_frac) c.t_sp_frac = *f.t_sp_frac;
  if (!f.descriptor_variant.empty()) c.descriptor_variant = parse_variant(f.descriptor_variant);
  if (!f.backend.empty()) c.backend = parse_backend(f.backend);
  if (f.num_trees) c.num_trees = *f.num_trees;
  if (!f.max_checks.empty()) c.max_checks = parse_count(f.max_checks);
  if (f.seed) c.seed = *f.seed;
  validate(c);
  return c;
}

Roi parse_roi_flag(const std::string& s) {
  Roi r;
  char tail = 0;
  if (std::sscanf(s.c_str(), "%d,%d,%d,%d%c", &r.x, &r.y, &r.width, &r.height, &tail) != 4) {
    throw Error(ErrorCode::kInvalidInput, "--roi expects x,y,w,h");
  }
  return r;
}

bool is_image_file(const fs::path& p) {
  static const std::set<std::string> ext{".png", ".pgm", ".ppm", ".pnm"};
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return ext.contains(e);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------------------

int cmd_ingest(const fs::path& catalog_dir, const std::string& input, const std::string& variant) {
  CatalogOptions opts;
  if (!variant.empty()) opts.variant = parse_variant(variant);
  Catalog catalog(catalog_dir, opts);
  const fs::path in(input);
  std::size_t added = 0;
  if (fs::is_directory(in)) {
    // <dir>/<label>/<image> is labeled by its directory; <dir>/<image> is not.
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(in)) {
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& f : files) {
      std::optional<std::string> label;
      if (f.parent_path() != in) label = f.parent_path().filename().string();
      catalog.add_image_file(f, std::nullopt, label);
      ++added;
    }
  } else {
    // JSON list of {"path", "roi": [x, y, w, h] (optional), "label" (optional)}.
    std::ifstream file(in);
    if (!file) throw Error(ErrorCode::kIo, "cannot read " + input);
    nlohmann::json list;
    try {
      list = nlohmann::json::parse(file);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kFormat, input + ": " + e.what());
    }
    for (const auto& item : list) {
      fs::path p = item.at("path").get<std::string>();
      if (p.is_relative()) p = in.parent_path() / p;
      std::optional<Roi> roi;
      if (item.contains("roi")) {
        const auto& r = item["roi"];
        roi = Roi{r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>(), r.at(3).get<int>()};
      }
      std::optional<std::string> label;
      if (item.contains("label") && !item["label"].is_null()) label = item["label"].get<std::string>();
      catalog.add_image_file(p, roi, label);
      ++added;
    }
  }
  fmt::print("ingested {} images into {} ({} total)\n", added, catalog_dir.string(), catalog.images().size());
  return 0;
}

int cmd_index(const fs::path& catalog_dir, const std::string& backend, int trees, const std::string& checks,
              std::uint64_t seed, const std::string& variant) {
  Catalog catalog(catalog_dir);
  BuildParams p;
  p.backend = parse_backend(backend);
  p.num_trees = trees;
  p.max_checks = parse_count(checks);
  p.seed = seed;
  p.variant = variant.empty() ? catalog.variant() : parse_variant(variant);
  const IndexGeneration g = catalog.build_generation(p);
  fmt::print("generation {}: {} backend, {} descriptors, {}\n", g.generation, to_string(g.backend),
             g.fingerprint.count, to_string(g.variant));
  return 0;
}

std::shared_ptr<const Generation> generation_for(Catalog& catalog, const ConfigFlags& flags, bool allow_build) {
  auto gen = catalog.current();
  const QueryConfig wanted = resolve(flags, gen.get());
  const bool fits = gen && gen->info.variant == wanted.descriptor_variant &&
                    (wanted.algorithm == Algorithm::kOneVsOne || gen->info.backend == wanted.backend);
  if (fits) return gen;
  if (!allow_build) {
    throw Error(gen ? ErrorCode::kIncompatible : ErrorCode::kNoGeneration,
                "no compatible index generation; run `stripeid index`");
  }
  BuildParams p;
  p.backend = wanted.backend;
  p.variant = wanted.descriptor_variant;
  p.seed = wanted.seed;
  spdlog::info("building a {} / {} generation for this run", to_string(p.backend), to_string(p.variant));
  catalog.build_generation(p);
  return catalog.current();
}

int cmd_query(const fs::path& catalog_dir, const std::string& image, const std::string& roi_text,
              const ConfigFlags& flags, const std::string& out, std::size_t top) {
  Catalog catalog(catalog_dir);
  const auto gen = generation_for(catalog, flags, false);
  const QueryConfig config = resolve(flags, gen.get());
  const GrayImage pixels = load_image(image);
  const Roi roi = roi_text.empty() ? Roi{0, 0, pixels.width(), pixels.height()} : parse_roi_flag(roi_text);
  const RankedResult r = run_query(*gen, pixels, roi, config);

  fmt::print("{:>4}  {:<24} {:>12} {:>12}\n", "rank", "label", "label score", "image score");
  for (std::size_t i = 0; i < std::min(top, r.labels.size()); ++i) {
    const ScoredLabel& l = r.labels[i];
    double image_score = 0.0;
    for (const ScoredLabel& m : r.image_labels) {
      if (m.label_id == l.label_id) image_score = m.score;
    }
    const auto it = gen->label_names.find(l.label_id);
    fmt::print("{:>4}  {:<24} {:>12.4f} {:>12.4f}\n", i + 1,
               it != gen->label_names.end() ? it->second : std::to_string(l.label_id.value), l.score, image_score);
  }
  fmt::print("generation {}, {:.3f} s\n", r.generation, r.total_seconds);
  if (!out.empty()) write_text(out, to_json(r, gen.get()).dump(2) + "\n");
  return 0;
}

int cmd_eval(const fs::path& catalog_dir, const ConfigFlags& flags, const std::string& out, std::size_t max_queries,
             const std::string& table_out) {
  Catalog catalog(catalog_dir);
  const auto gen = generation_for(catalog, flags, true);
  const QueryConfig config = resolve(flags, gen.get());
  EvalOptions opts;
  opts.max_queries = max_queries;
  opts.progress = [](std::size_t done, std::size_t total) {
    if (done % 10 == 0 || done == total) spdlog::info("{}/{} queries", done, total);
  };
  const EvalReport report = run_eval(*gen, config, opts);
  const std::string table = format_table(std::span(&report, 1));
  fmt::print("{}", table);
  if (!out.empty()) write_text(out, to_json(report).dump(2) + "\n");
  if (!table_out.empty()) write_text(table_out, table);
  return 0;
}

int cmd_synth(const SynthParams& p, const std::string& out) {
  const auto catalog = gen_synthetic(p, out);
  fmt::print("wrote {} images of {} labels to {}\n", catalog->images().size(), catalog->labels().size(), out);
  return 0;
}

Service* g_service = nullptr;
extern "C" void on_signal(int) {
  if (g_service) g_service->stop();
}

int cmd_serve(const fs::path& catalog_dir, int port, const std::string& host, const std::string& static_dir) {
  Catalog catalog(catalog_dir);
  ServiceOptions opts;
  opts.host = host;
  opts.port = port;
  if (!static_dir.empty()) opts.static_dir = static_dir;
  if (const auto gen = catalog.current()) {
    opts.build.backend = gen->info.backend;
    opts.build.variant = gen->info.variant;
    opts.build.num_trees = gen->info.num_trees;
    opts.build.max_checks = gen->info.max_checks;
    opts.build.seed = gen->info.seed;
    opts.defaults.max_checks = gen->info.max_checks;
  } else {
    opts.build.variant = catalog.variant();
  }
  Service service(catalog, opts);
  service.bind();
  g_service = &service;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  service.run();
  g_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stripeid: identify individual patterned animals by local feature matching"};
  app.require_subcommand(1);
  std::string catalog_dir = ".";
  std::string log_level = "info";
  app.add_option("-C,--catalog", catalog_dir, "Catalog directory")->capture_default_str();
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();

  std::string ingest_input, ingest_variant;
  auto* ingest = app.add_subcommand("ingest", "Add images from a directory or a JSON manifest");
  ingest->add_option("input", ingest_input, "Directory (labels from subdirectories) or manifest JSON")->required();
  ingest->add_option("--descriptor_variant", ingest_variant, "Variant stored by a new catalog");

  std::string idx_backend = "kdforest", idx_checks = "128", idx_variant;
  int idx_trees = 4;
  std::uint64_t idx_seed = 0;
  auto* index = app.add_subcommand("index", "Build a new index generation");
  index->add_option("--backend", idx_backend, "kdforest or pq")->capture_default_str();
  index->add_option("--trees", idx_trees, "Trees in the forest")->capture_default_str();
  index->add_option("--checks", idx_checks, "Default search budget (inf = exact)")->capture_default_str();
  index->add_option("--seed", idx_seed, "Build seed")->capture_default_str();
  index->add_option("--descriptor_variant", idx_variant, "sift or rootsift (default: catalog's)");

  ConfigFlags query_flags;
  std::string query_image, query_roi, query_out;
  std::size_t query_top = 10;
  auto* query = app.add_subcommand("query", "Rank catalog labels for one image");
  query->add_option("image", query_image, "Query image")->required();
  query->add_option("--roi", query_roi, "x,y,w,h (default: whole image)");
  query->add_option("--out", query_out, "Write the full result as JSON");
  query->add_option("--top", query_top, "Labels to print")->capture_default_str();
  add_config_flags(query, query_flags);

  ConfigFlags eval_flags;
  std::string eval_out, eval_table;
  std::size_t eval_max = std::numeric_limits<std::size_t>::max();
  auto* eval = app.add_subcommand("eval", "Leave-one-out evaluation over the catalog");
  eval->add_option("--out", eval_out, "Report JSON");
  eval->add_option("--table", eval_table, "Also write the text table here");
  eval->add_option("--max-queries", eval_max, "Evaluate an evenly spaced subset");
  add_config_flags(eval, eval_flags);

  SynthParams synth_params;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled catalog");
  synth->add_option("--labels", synth_params.n_labels, "Individuals")->capture_default_str();
  synth->add_option("--per-label", synth_params.images_per_label, "Images per individual")->capture_default_str();
  synth->add_option("--seed", synth_params.seed, "Seed")->capture_default_str();
  synth->add_option("--warp", synth_params.warp_magnitude, "Warp magnitude")->capture_default_str();
  synth->add_option("--noise", synth_params.noise, "Pixel noise sigma")->capture_default_str();
  synth->add_option("--clutter", synth_params.clutter, "Per-image pattern change in [0, 1)")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->required();

  int serve_port = 8080;
  std::string serve_host = "127.0.0.1", serve_static;
  auto* serve = app.add_subcommand("serve", "Serve the HTTP API (and the review UI)");
  serve->add_option("--port", serve_port, "Port (default: HS_PORT or 8080)");
  serve->add_option("--host", serve_host, "Bind address")->capture_default_str();
  serve->add_option("--static", serve_static, "Directory with the built review UI");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));
  spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");

  try {
    if (*ingest) return cmd_ingest(catalog_dir, ingest_input, ingest_variant);
    if (*index) return cmd_index(catalog_dir, idx_backend, idx_trees, idx_checks, idx_seed, idx_variant);
    if (*query) return cmd_query(catalog_dir, query_image, query_roi, query_flags, query_out, query_top);
    if (*eval) return cmd_eval(catalog_dir, eval_flags, eval_out, eval_max, eval_table);
    if (*synth) return cmd_synth(synth_params, synth_out);
    if (*serve) {
      if (serve->count("--port") == 0) {
        if (const char* env = std::getenv("HS_PORT")) serve_port = std::atoi(env);
      }
      return cmd_serve(catalog_dir, serve_port, serve_host, serve_static);
    }
  } catch (const Error& e) {
    spdlog::error("{} ({})", e.what(), to_string(e.code()));
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
