#pragma once

#include <nlohmann/json.hpp>
#include <span>
#include <string>

#include "stripeid/engine.hpp"

namespace stripeid {

/// Short configuration tag in the style "1vM+PQ+R0+S".
std::string algorithm_tag(const QueryConfig& config);

nlohmann::json to_json(const EvalReport& report);
/// Label names are taken from `gen` when given.
nlohmann::json to_json(const RankedResult& result, const Generation* gen = nullptr, std::size_t max_images = 20);

/// Aligned text table, one row per report:
/// Algorithm | k | delta | Rank>1 label image | Rank>5 label image | TPQ (sec).
std::string format_table(std::span<const EvalReport> reports);

}  // namespace stripeid
