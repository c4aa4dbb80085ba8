#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <span>
#include <unordered_set>
#include <vector>

#include "stripeid/features.hpp"
#include "stripeid/types.hpp"

namespace stripeid {

struct DescriptorOwner {
  ImageId image_id;
  std::uint32_t local_index = 0;

  friend bool operator==(const DescriptorOwner&, const DescriptorOwner&) = default;
};

struct PoolFingerprint {
  std::uint64_t count = 0;
  std::uint64_t checksum = 0;

  friend bool operator==(const PoolFingerprint&, const PoolFingerprint&) = default;
};

/// Contiguous 128-d vectors with, for each, the image and local feature index
/// it came from.
class DescriptorPool {
 public:
  /// Appends all descriptors of one image; an image may be added once.
  void add_image(ImageId image, std::span<const Descriptor> descriptors);

  std::size_t size() const noexcept { return owners_.size(); }
  bool empty() const noexcept { return owners_.empty(); }

  std::span<const float, kDescriptorDim> vector(std::size_t i) const {
    return std::span<const float, kDescriptorDim>(data_.data() + i * kDescriptorDim, kDescriptorDim);
  }
  const DescriptorOwner& owner(std::size_t i) const { return owners_[i]; }
  std::span<const float> data() const noexcept { return data_; }
  std::span<const DescriptorOwner> owners() const noexcept { return owners_; }

  PoolFingerprint fingerprint() const;

 private:
  std::vector<float> data_;
  std::vector<DescriptorOwner> owners_;
  std::unordered_set<ImageId> images_;
};

/// Pool indices with squared L2 distances, sorted by (distance, index).
struct NeighborList {
  std::vector<std::uint32_t> indices;
  std::vector<float> distances_sq;

  std::size_t size() const noexcept { return indices.size(); }
};

inline constexpr std::size_t kUnlimitedChecks = std::numeric_limits<std::size_t>::max();

float squared_distance(std::span<const float, kDescriptorDim> a, std::span<const float, kDescriptorDim> b);

struct ForestParams {
  int num_trees = 4;
  std::size_t max_checks = 128;
  std::uint64_t seed = 0;
};

/// Randomized k-d trees over one pool. Each node splits at the median of a
/// dimension drawn uniformly from the five highest-variance dimensions;
/// leaves hold at most eight vectors. Immutable once built.
class KdForest {
 public:
  static constexpr std::size_t kLeafSize = 8;
  static constexpr int kTopDimensions = 5;

  struct Node {
    std::int32_t split_dim = -1;  // -1 marks a leaf
    float split_value = 0.0f;
    std::uint32_t first = 0;  // left child, or leaf begin into `order`
    std::uint32_t second = 0; // right child, or leaf end
    std::uint32_t parent = 0;

    bool leaf() const noexcept { return split_dim < 0; }
    friend bool operator==(const Node&, const Node&) = default;
  };

  struct Tree {
    std::vector<Node> nodes;  // nodes[0] is the root
    std::vector<std::uint32_t> order;

    friend bool operator==(const Tree&, const Tree&) = default;
  };

  /// Throws kEmptyPool for an empty pool.
  static KdForest build(std::shared_ptr<const DescriptorPool> pool, int num_trees, std::uint64_t seed);

  /// Best-first search over all trees with one shared priority queue; stops
  /// after `max_checks` distance evaluations. kUnlimitedChecks gives exact
  /// results. k is clipped to the pool size.
  NeighborList search(std::span<const float, kDescriptorDim> q, std::size_t k,
                      std::size_t max_checks) const;

  const DescriptorPool& pool() const noexcept { return *pool_; }
  std::shared_ptr<const DescriptorPool> shared_pool() const noexcept { return pool_; }
  std::span<const Tree> trees() const noexcept { return trees_; }
  std::uint64_t seed() const noexcept { return seed_; }

  // Advisory cache ("HSKD" v1). load() throws kIncompatible when the cached
  // fingerprint does not match `pool`.
  std::vector<std::uint8_t> serialize() const;
  static KdForest deserialize(std::span<const std::uint8_t> bytes,
                              std::shared_ptr<const DescriptorPool> pool);
  void save(const std::filesystem::path& path) const;
  static KdForest load(const std::filesystem::path& path, std::shared_ptr<const DescriptorPool> pool);

 private:
  std::shared_ptr<const DescriptorPool> pool_;
  std::vector<Tree> trees_;
  std::uint64_t seed_ = 0;
};

inline NeighborList knn_search(const KdForest& forest, std::span<const float, kDescriptorDim> q,
                               std::size_t k, std::size_t max_checks) {
  return forest.search(q, k, max_checks);
}

/// Exact k-NN by full scan; ties go to the lower pool index.
NeighborList brute_force_knn(const DescriptorPool& pool, std::span<const float, kDescriptorDim> q,
                             std::size_t k);

}  // namespace stripeid
