#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "stripeid/ann_index.hpp"

namespace stripeid::detail {

/// Bounded selection of the k smallest (distance, index) pairs; ties prefer
/// the lower index.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) { heap_.reserve(k + 1); }

  bool full() const noexcept { return heap_.size() >= k_; }

  /// Largest kept distance, or +inf while not full.
  float worst() const noexcept {
    return full() && !heap_.empty() ? heap_.front().dist : std::numeric_limits<float>::infinity();
  }

  void push(float dist, std::uint32_t index) {
    if (k_ == 0) return;
    const Entry e{dist, index};
    if (!full()) {
      heap_.push_back(e);
      std::push_heap(heap_.begin(), heap_.end());
    } else if (e < heap_.front()) {
      std::pop_heap(heap_.begin(), heap_.end());
      heap_.back() = e;
      std::push_heap(heap_.begin(), heap_.end());
    }
  }

  NeighborList finish() {
    std::sort_heap(heap_.begin(), heap_.end());
    NeighborList out;
    out.indices.reserve(heap_.size());
    out.distances_sq.reserve(heap_.size());
    for (const auto& e : heap_) {
      out.indices.push_back(e.index);
      out.distances_sq.push_back(e.dist);
    }
    return out;
  }

 private:
  struct Entry {
    float dist;
    std::uint32_t index;
    bool operator<(const Entry& o) const noexcept {
      return dist < o.dist || (dist == o.dist && index < o.index);
    }
  };

  std::size_t k_;
  std::vector<Entry> heap_;
};

}  // namespace stripeid::detail
