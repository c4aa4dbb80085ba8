#include "stripeid/ann_index.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <numeric>
#include <queue>
#include <random>

#include "binary_io.hpp"
#include "top_k.hpp"

namespace stripeid {

void DescriptorPool::add_image(ImageId image, std::span<const Descriptor> descriptors) {
  if (!images_.insert(image).second) {
    throw Error(ErrorCode::kInvalidInput, "image already present in descriptor pool");
  }
  data_.reserve(data_.size() + descriptors.size() * kDescriptorDim);
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    data_.insert(data_.end(), descriptors[i].begin(), descriptors[i].end());
    owners_.push_back({image, static_cast<std::uint32_t>(i)});
  }
}

PoolFingerprint DescriptorPool::fingerprint() const {
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(data_.data());
  return {owners_.size(), detail::fnv1a({bytes, data_.size() * sizeof(float)})};
}

float squared_distance(std::span<const float, kDescriptorDim> a,
                       std::span<const float, kDescriptorDim> b) {
  using Vec = Eigen::Matrix<float, static_cast<int>(kDescriptorDim), 1>;
  return (Eigen::Map<const Vec>(a.data()) - Eigen::Map<const Vec>(b.data())).squaredNorm();
}

namespace {

float coordinate(const DescriptorPool& pool, std::uint32_t index, int dim) {
  return pool.data()[static_cast<std::size_t>(index) * kDescriptorDim + static_cast<std::size_t>(dim)];
}

// Variance is estimated on at most this many evenly spaced node members.
constexpr std::size_t kVarianceSample = 128;

int choose_split_dim(const DescriptorPool& pool, std::span<const std::uint32_t> members,
                     std::mt19937_64& rng) {
  const std::size_t n = members.size();
  const std::size_t samples = std::min(n, kVarianceSample);
  std::array<double, kDescriptorDim> mean{};
  std::array<double, kDescriptorDim> sq{};
  for (std::size_t s = 0; s < samples; ++s) {
    const auto v = pool.vector(members[s * n / samples]);
    for (std::size_t d = 0; d < kDescriptorDim; ++d) {
      mean[d] += v[d];
      sq[d] += static_cast<double>(v[d]) * v[d];
    }
  }
  std::array<int, kDescriptorDim> dims{};
  std::array<double, kDescriptorDim> var{};
  for (std::size_t d = 0; d < kDescriptorDim; ++d) {
    const double m = mean[d] / static_cast<double>(samples);
    var[d] = sq[d] / static_cast<double>(samples) - m * m;
    dims[d] = static_cast<int>(d);
  }
  const int top = KdForest::kTopDimensions;
  std::partial_sort(dims.begin(), dims.begin() + top, dims.end(), [&](int x, int y) {
    const auto ux = static_cast<std::size_t>(x), uy = static_cast<std::size_t>(y);
    return var[ux] > var[uy] || (var[ux] == var[uy] && x < y);
  });
  std::uniform_int_distribution<int> pick(0, top - 1);
  return dims[static_cast<std::size_t>(pick(rng))];
}

KdForest::Tree build_tree(const DescriptorPool& pool, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  KdForest::Tree tree;
  tree.order.resize(pool.size());
  std::iota(tree.order.begin(), tree.order.end(), 0u);
  tree.nodes.reserve(2 * (pool.size() / KdForest::kLeafSize + 1));
  tree.nodes.push_back({});

  struct Pending {
    std::uint32_t node, begin, end;
  };
  std::vector<Pending> stack{{0, 0, static_cast<std::uint32_t>(pool.size())}};
  while (!stack.empty()) {
    const Pending p = stack.back();
    stack.pop_back();
    const std::uint32_t n = p.end - p.begin;
    if (n <= KdForest::kLeafSize) {
      auto& node = tree.nodes[p.node];
      node.split_dim = -1;
      node.first = p.begin;
      node.second = p.end;
      continue;
    }
    auto* first = tree.order.data() + p.begin;
    const int dim = choose_split_dim(pool, {first, n}, rng);
    const std::uint32_t mid = p.begin + n / 2;
    std::nth_element(first, tree.order.data() + mid, tree.order.data() + p.end,
                     [&](std::uint32_t x, std::uint32_t y) {
                       const float vx = coordinate(pool, x, dim), vy = coordinate(pool, y, dim);
                       return vx < vy || (vx == vy && x < y);
                     });
    const auto left = static_cast<std::uint32_t>(tree.nodes.size());
    tree.nodes.push_back({});
    tree.nodes.push_back({});
    auto& node = tree.nodes[p.node];
    node.split_dim = dim;
    node.split_value = coordinate(pool, tree.order[mid], dim);
    node.first = left;
    node.second = left + 1;
    tree.nodes[left].parent = p.node;
    tree.nodes[left + 1].parent = p.node;
    stack.push_back({left + 1, mid, p.end});
    stack.push_back({left, p.begin, mid});
  }
  return tree;
}

}  // namespace

KdForest KdForest::build(std::shared_ptr<const DescriptorPool> pool, int num_trees, std::uint64_t seed) {
  if (!pool || pool->empty()) throw Error(ErrorCode::kEmptyPool, "cannot index an empty descriptor pool");
  if (num_trees < 1) throw Error(ErrorCode::kInvalidInput, "forest needs at least one tree");
  KdForest forest;
  forest.pool_ = std::move(pool);
  forest.seed_ = seed;
  for (int t = 0; t < num_trees; ++t) {
    const std::uint64_t tree_seed = seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(t + 1);
    forest.trees_.push_back(build_tree(*forest.pool_, tree_seed));
  }
  return forest;
}

NeighborList KdForest::search(std::span<const float, kDescriptorDim> q, std::size_t k,
                              std::size_t max_checks) const {
  const std::size_t n = pool_->size();
  k = std::min(k, n);
  if (k == 0) return {};
  max_checks = std::max(max_checks, k);

  struct Branch {
    double bound;
    std::uint64_t seq;
    std::uint32_t tree;
    std::uint32_t node;
    bool operator>(const Branch& o) const noexcept {
      return bound > o.bound || (bound == o.bound && seq > o.seq);
    }
  };
  std::priority_queue<Branch, std::vector<Branch>, std::greater<>> queue;
  std::uint64_t seq = 0;
  for (std::size_t t = 0; t < trees_.size(); ++t) queue.push({0.0, seq++, static_cast<std::uint32_t>(t), 0});

  detail::TopK best(k);
  std::vector<std::uint64_t> visited((n + 63) / 64, 0);
  std::array<double, kDescriptorDim> offset{};
  std::vector<int> touched;
  std::size_t checks = 0;
  // Slack so float rounding in distances never prunes an exact tie.
  auto worst_bound = [&] { return static_cast<double>(best.worst()) * (1.0 + 1e-6) + 1e-12; };

  while (!queue.empty() && checks < max_checks) {
    const Branch br = queue.top();
    queue.pop();
    if (best.full() && br.bound > worst_bound()) break;

    const Tree& tree = trees_[br.tree];
    for (int d : touched) offset[static_cast<std::size_t>(d)] = 0.0;
    touched.clear();
    // Offsets of the query from this node's cell, one per constrained dim.
    for (std::uint32_t child = br.node; child != 0;) {
      const std::uint32_t parent = tree.nodes[child].parent;
      const Node& p = tree.nodes[parent];
      const auto d = static_cast<std::size_t>(p.split_dim);
      const double diff = static_cast<double>(q[d]) - p.split_value;
      const double off = p.first == child ? std::max(0.0, diff) : std::max(0.0, -diff);
      if (off > offset[d]) {
        if (offset[d] == 0.0) touched.push_back(p.split_dim);
        offset[d] = off;
      }
      child = parent;
    }
    double dist = 0.0;
    for (int d : touched) dist += offset[static_cast<std::size_t>(d)] * offset[static_cast<std::size_t>(d)];

    std::uint32_t node = br.node;
    while (!tree.nodes[node].leaf()) {
      const Node& nd = tree.nodes[node];
      const auto d = static_cast<std::size_t>(nd.split_dim);
      const double diff = static_cast<double>(q[d]) - nd.split_value;
      const std::uint32_t near = diff < 0.0 ? nd.first : nd.second;
      const std::uint32_t far = diff < 0.0 ? nd.second : nd.first;
      const double far_bound = dist - offset[d] * offset[d] + diff * diff;
      if (!best.full() || far_bound <= worst_bound()) queue.push({far_bound, seq++, br.tree, far});
      node = near;
    }
    const Node& leaf = tree.nodes[node];
    for (std::uint32_t i = leaf.first; i < leaf.second; ++i) {
      const std::uint32_t idx = tree.order[i];
      auto& word = visited[idx / 64];
      const std::uint64_t bit = 1ULL << (idx % 64);
      if (word & bit) continue;
      word |= bit;
      ++checks;
      best.push(squared_distance(q, pool_->vector(idx)), idx);
    }
  }
  return best.finish();
}

NeighborList brute_force_knn(const DescriptorPool& pool, std::span<const float, kDescriptorDim> q,
                             std::size_t k) {
  detail::TopK best(std::min(k, pool.size()));
  for (std::size_t i = 0; i < pool.size(); ++i) {
    best.push(squared_distance(q, pool.vector(i)), static_cast<std::uint32_t>(i));
  }
  return best.finish();
}

// ---------------------------------------------------------------------------
// Cache file

namespace {
constexpr std::string_view kForestMagic = "HSKD";
constexpr std::uint32_t kForestVersion = 1;
}  // namespace

std::vector<std::uint8_t> KdForest::serialize() const {
  detail::ByteWriter w;
  w.magic(kForestMagic);
  w.u32(kForestVersion);
  const PoolFingerprint fp = pool_->fingerprint();
  w.u64(fp.count);
  w.u64(fp.checksum);
  w.u64(seed_);
  w.u32(static_cast<std::uint32_t>(trees_.size()));
  for (const Tree& tree : trees_) {
    w.u32(static_cast<std::uint32_t>(tree.nodes.size()));
    for (const Node& nd : tree.nodes) {
      w.i32(nd.split_dim);
      w.f32(nd.split_value);
      w.u32(nd.first);
      w.u32(nd.second);
      w.u32(nd.parent);
    }
    w.u32(static_cast<std::uint32_t>(tree.order.size()));
    for (std::uint32_t idx : tree.order) w.u32(idx);
  }
  return std::move(w.bytes());
}

KdForest KdForest::deserialize(std::span<const std::uint8_t> bytes,
                               std::shared_ptr<const DescriptorPool> pool) {
  if (!pool) throw Error(ErrorCode::kEmptyPool, "forest cache needs a pool");
  detail::ByteReader r(bytes, "forest cache");
  r.expect_magic(kForestMagic);
  if (r.u32() != kForestVersion) r.fail("unsupported version");
  PoolFingerprint fp;
  fp.count = r.u64();
  fp.checksum = r.u64();
  if (!(fp == pool->fingerprint())) {
    throw Error(ErrorCode::kIncompatible, "forest cache does not match the descriptor pool");
  }
  KdForest forest;
  forest.pool_ = std::move(pool);
  forest.seed_ = r.u64();
  const std::uint32_t num_trees = r.u32();
  for (std::uint32_t t = 0; t < num_trees; ++t) {
    Tree tree;
    const std::uint32_t nodes = r.u32();
    if (r.remaining() / 20 < nodes) r.fail("truncated");
    tree.nodes.resize(nodes);
    for (Node& nd : tree.nodes) {
      nd.split_dim = r.i32();
      nd.split_value = r.f32();
      nd.first = r.u32();
      nd.second = r.u32();
      nd.parent = r.u32();
      if (nd.split_dim >= static_cast<std::int32_t>(kDescriptorDim)) r.fail("bad split dimension");
    }
    const std::uint32_t order = r.u32();
    if (order != forest.pool_->size()) r.fail("tree does not cover the pool");
    tree.order.resize(order);
    for (auto& idx : tree.order) {
      idx = r.u32();
      if (idx >= order) r.fail("index out of range");
    }
    for (const Node& nd : tree.nodes) {
      const std::uint32_t limit = nd.leaf() ? order : nodes;
      if (nd.first > limit || nd.second > limit || nd.parent >= nodes) r.fail("corrupt node");
    }
    forest.trees_.push_back(std::move(tree));
  }
  if (forest.trees_.empty()) r.fail("no trees");
  return forest;
}

void KdForest::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  detail::write_file_atomic(path, bytes);
}

KdForest KdForest::load(const std::filesystem::path& path, std::shared_ptr<const DescriptorPool> pool) {
  return deserialize(detail::read_file(path), std::move(pool));
}

}  // namespace stripeid
