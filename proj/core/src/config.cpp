#include "stripeid/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <limits>

#include "stripeid/error.hpp"

namespace stripeid {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return out;
}

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorCode::kInvalidInput, what); }

std::size_t count_from_json(const nlohmann::json& v, const char* name) {
  if (v.is_string()) return parse_count(v.get<std::string>());
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::size_t>();
  bad(std::string("field '") + name + "' must be a non-negative integer or \"inf\"");
}

}  // namespace

std::string_view to_string(Algorithm a) noexcept { return a == Algorithm::kOneVsOne ? "1v1" : "1vM"; }
std::string_view to_string(Backend b) noexcept { return b == Backend::kKdForest ? "kdforest" : "pq"; }
std::string_view to_string(DescriptorVariant v) noexcept {
  return v == DescriptorVariant::kSift ? "sift" : "rootsift";
}

Algorithm parse_algorithm(std::string_view s) {
  const std::string l = lower(s);
  if (l == "1v1") return Algorithm::kOneVsOne;
  if (l == "1vm") return Algorithm::kOneVsMany;
  bad("unknown algorithm '" + std::string(s) + "'");
}

Backend parse_backend(std::string_view s) {
  const std::string l = lower(s);
  if (l == "kdforest") return Backend::kKdForest;
  if (l == "pq") return Backend::kPq;
  bad("unknown backend '" + std::string(s) + "'");
}

DescriptorVariant parse_variant(std::string_view s) {
  const std::string l = lower(s);
  if (l == "sift") return DescriptorVariant::kSift;
  if (l == "rootsift") return DescriptorVariant::kRootSift;
  bad("unknown descriptor variant '" + std::string(s) + "'");
}

std::size_t parse_count(std::string_view s) {
  const std::string l = lower(s);
  if (l == "inf" || l == "all" || l == "unlimited") return std::numeric_limits<std::size_t>::max();
  std::size_t n = 0;
  const auto [ptr, ec] = std::from_chars(l.data(), l.data() + l.size(), n);
  if (ec != std::errc{} || ptr != l.data() + l.size() || l.empty()) bad("not a count: '" + std::string(s) + "'");
  return n;
}

std::string format_count(std::size_t n) {
  return n == std::numeric_limits<std::size_t>::max() ? "inf" : std::to_string(n);
}

void validate(const QueryConfig& c) {
  if (c.k < 1) bad("k must be at least 1");
  if (!(c.t_ratio >= 1.0)) bad("t_ratio must be at least 1");
  if (!(c.t_sp_frac > 0.0)) bad("t_sp_frac must be positive");
  if (c.num_trees < 1) bad("num_trees must be at least 1");
  if (c.max_checks < 1) bad("max_checks must be at least 1");
}

nlohmann::json to_json(const QueryConfig& c) {
  nlohmann::json j;
  j["algorithm"] = to_string(c.algorithm);
  j["k"] = c.k;
  j["delta"] = to_string(c.delta);
  j["t_ratio"] = c.t_ratio;
  if (c.K_SR == kRerankAll) {
    j["K_SR"] = "inf";
  } else {
    j["K_SR"] = c.K_SR;
  }
  j["t_sp_frac"] = c.t_sp_frac;
  j["descriptor_variant"] = to_string(c.descriptor_variant);
  j["backend"] = to_string(c.backend);
  j["num_trees"] = c.num_trees;
  if (c.max_checks == kUnlimitedChecks) {
    j["max_checks"] = "inf";
  } else {
    j["max_checks"] = c.max_checks;
  }
  j["seed"] = c.seed;
  return j;
}

QueryConfig query_config_from_json(const nlohmann::json& j, QueryConfig c) {
  if (!j.is_object()) bad("config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "algorithm") {
        c.algorithm = parse_algorithm(v.get<std::string>());
      } else if (key == "k") {
        c.k = v.get<int>();
      } else if (key == "delta") {
        c.delta = parse_scoring_fn(v.get<std::string>());
      } else if (key == "t_ratio") {
        c.t_ratio = v.get<double>();
      } else if (key == "K_SR") {
        c.K_SR = count_from_json(v, "K_SR");
      } else if (key == "t_sp_frac") {
        c.t_sp_frac = v.get<double>();
      } else if (key == "descriptor_variant") {
        c.descriptor_variant = parse_variant(v.get<std::string>());
      } else if (key == "backend") {
        c.backend = parse_backend(v.get<std::string>());
      } else if (key == "num_trees") {
        c.num_trees = v.get<int>();
      } else if (key == "max_checks") {
        c.max_checks = count_from_json(v, "max_checks");
      } else if (key == "seed") {
        c.seed = v.get<std::uint64_t>();
      } else {
        bad("unknown config field '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      bad("config field '" + key + "': " + e.what());
    }
  }
  validate(c);
  return c;
}

}  // namespace stripeid
