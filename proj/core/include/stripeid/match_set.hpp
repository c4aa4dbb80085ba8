#pragma once

#include <cstdint>
#include <vector>

#include "stripeid/types.hpp"

namespace stripeid {

/// One correspondence: database feature `db_index` of an image, query
/// feature `query_index`, and its distinctiveness score.
struct MatchTriple {
  std::uint32_t db_index = 0;
  std::uint32_t query_index = 0;
  double score = 0.0;

  friend bool operator==(const MatchTriple&, const MatchTriple&) = default;
};

/// All correspondences between the query and a single database image.
struct MatchSet {
  ImageId image_id;
  std::vector<MatchTriple> triples;

  friend bool operator==(const MatchSet&, const MatchSet&) = default;
};

}  // namespace stripeid
