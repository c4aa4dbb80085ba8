#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <string_view>

#include "stripeid/features.hpp"
#include "stripeid/matching.hpp"
#include "stripeid/scoring.hpp"

namespace stripeid {

enum class Algorithm { kOneVsOne, kOneVsMany };
enum class Backend { kKdForest, kPq };

std::string_view to_string(Algorithm a) noexcept;
std::string_view to_string(Backend b) noexcept;
std::string_view to_string(DescriptorVariant v) noexcept;
/// "1v1" / "1vM".
Algorithm parse_algorithm(std::string_view s);
/// "kdforest" / "pq".
Backend parse_backend(std::string_view s);
/// "sift" / "rootsift" (case-insensitive).
DescriptorVariant parse_variant(std::string_view s);

/// Every knob of one query or evaluation run.
struct QueryConfig {
  Algorithm algorithm = Algorithm::kOneVsMany;
  int k = 1;
  ScoringFn delta = ScoringFn::kLnrat;
  double t_ratio = 2.56;
  /// kRerankAll reranks every candidate; 0 reranks none.
  std::size_t K_SR = 50;
  double t_sp_frac = 0.10;
  DescriptorVariant descriptor_variant = DescriptorVariant::kRootSift;
  Backend backend = Backend::kKdForest;
  int num_trees = 4;
  /// kUnlimitedChecks for exact search.
  std::size_t max_checks = 128;
  std::uint64_t seed = 0;

  friend bool operator==(const QueryConfig&, const QueryConfig&) = default;
};

/// Throws kInvalidInput on out-of-range fields.
void validate(const QueryConfig& config);

/// K_SR and max_checks serialize as "inf" when unlimited.
nlohmann::json to_json(const QueryConfig& config);
/// Missing fields keep their defaults; unknown fields and malformed values
/// throw kInvalidInput.
QueryConfig query_config_from_json(const nlohmann::json& j, QueryConfig base = {});

/// Parses a count that may be "inf"/"all"/"unlimited".
std::size_t parse_count(std::string_view s);
std::string format_count(std::size_t n);

}  // namespace stripeid
