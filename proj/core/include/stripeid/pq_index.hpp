#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "stripeid/ann_index.hpp"

namespace stripeid {

/// 16 sub-codebooks of 128 eight-dimensional centroids each.
struct PQCodebook {
  static constexpr int kSubvectors = 16;
  static constexpr int kSubDim = 8;
  static constexpr int kWords = 128;

  /// Row-major [subvector][word][component].
  std::vector<float> centroids;
  std::uint32_t train_seed = 0;

  std::span<const float, kSubDim> centroid(int sub, int word) const {
    return std::span<const float, kSubDim>(
        centroids.data() + (static_cast<std::size_t>(sub) * kWords + static_cast<std::size_t>(word)) * kSubDim,
        kSubDim);
  }

  friend bool operator==(const PQCodebook&, const PQCodebook&) = default;
};

/// One word index (< 128) per subvector: 16 bytes per descriptor.
using PQCode = std::array<std::uint8_t, PQCodebook::kSubvectors>;
static_assert(sizeof(PQCode) == 16);

struct PQTrainOptions {
  int iterations = 25;
  /// Training uses a seeded subsample when the pool is larger than this.
  std::size_t max_training_vectors = 16384;
};

/// Per-subspace k-means (k-means++ seeding, empty clusters re-seeded from the
/// farthest point). `objective_trace`, when given, receives the mean total
/// quantization error after each assignment step. Throws kInsufficientData
/// for fewer than 128 vectors.
PQCodebook train_codebooks(const DescriptorPool& sample, std::uint32_t seed,
                           const PQTrainOptions& options = {},
                           std::vector<double>* objective_trace = nullptr);

/// Nearest centroid per subvector, ties to the lower word index.
PQCode encode(const PQCodebook& codebook, std::span<const float, kDescriptorDim> d);
Descriptor reconstruct(const PQCodebook& codebook, const PQCode& code);

/// Asymmetric-distance k-NN: a 16x128 table of squared distances from the
/// query's subvectors to every centroid, summed per code. Ties go to the
/// lower pool index.
NeighborList pq_knn_search(const PQCodebook& codebook, std::span<const PQCode> codes,
                           std::span<const float, kDescriptorDim> q, std::size_t k);

/// A trained codebook plus the encoded pool it was built for.
class PQIndex {
 public:
  static PQIndex build(std::shared_ptr<const DescriptorPool> pool, std::uint32_t seed,
                       const PQTrainOptions& options = {});
  PQIndex(PQCodebook codebook, std::vector<PQCode> codes, std::shared_ptr<const DescriptorPool> pool);

  NeighborList search(std::span<const float, kDescriptorDim> q, std::size_t k) const {
    return pq_knn_search(codebook_, codes_, q, k);
  }

  const PQCodebook& codebook() const noexcept { return codebook_; }
  std::span<const PQCode> codes() const noexcept { return codes_; }
  const DescriptorPool& pool() const noexcept { return *pool_; }
  /// Bytes used by the codes alone (16 per descriptor).
  std::size_t code_bytes() const noexcept { return codes_.size() * sizeof(PQCode); }

 private:
  PQCodebook codebook_;
  std::vector<PQCode> codes_;
  std::shared_ptr<const DescriptorPool> pool_;
};

// Codebook file ("HSPQ" v1) and code pool file ("HSPC" v1: u32 version,
// u64 count, then 16 bytes per code).
std::vector<std::uint8_t> encode_codebook(const PQCodebook& codebook);
PQCodebook decode_codebook(std::span<const std::uint8_t> bytes);
void write_codebook(const PQCodebook& codebook, const std::filesystem::path& path);
PQCodebook read_codebook(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_code_pool(std::span<const PQCode> codes);
std::vector<PQCode> decode_code_pool(std::span<const std::uint8_t> bytes);
inline constexpr std::size_t kCodePoolHeaderBytes = 16;

}  // namespace stripeid
