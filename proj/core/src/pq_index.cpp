#include "stripeid/pq_index.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "binary_io.hpp"
#include "top_k.hpp"

namespace stripeid {
namespace {

constexpr int kM = PQCodebook::kSubvectors;
constexpr int kD = PQCodebook::kSubDim;
constexpr int kK = PQCodebook::kWords;

inline float sub_distance(const float* a, const float* b) {
  float acc = 0.0f;
  for (int j = 0; j < kD; ++j) {
    const float diff = a[j] - b[j];
    acc += diff * diff;
  }
  return acc;
}

struct Assignment {
  int word;
  float dist;
};

inline Assignment nearest(const float* x, const float* centroids) {
  Assignment best{0, std::numeric_limits<float>::infinity()};
  for (int c = 0; c < kK; ++c) {
    const float d = sub_distance(x, centroids + c * kD);
    if (d < best.dist) best = {c, d};
  }
  return best;
}

// k-means on n points of dimension kD stored contiguously; returns the
// per-iteration mean squared error of the assignment step.
std::vector<double> kmeans(const std::vector<float>& points, std::size_t n, std::mt19937_64& rng,
                           int iterations, float* centroids) {
  // k-means++ seeding.
  std::vector<float> d2(n, std::numeric_limits<float>::infinity());
  std::uniform_int_distribution<std::size_t> uniform(0, n - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t chosen = uniform(rng);
  for (int c = 0; c < kK; ++c) {
    std::copy_n(points.data() + chosen * kD, kD, centroids + c * kD);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sub_distance(points.data() + i * kD, centroids + c * kD));
      total += d2[i];
    }
    if (c + 1 == kK) break;
    if (total <= 0.0) {
      chosen = uniform(rng);
      continue;
    }
    double target = unit(rng) * total;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0f) continue;
      chosen = i;
      target -= d2[i];
      if (target < 0.0) break;
    }
  }

  std::vector<double> trace;
  std::vector<Assignment> assign(n);
  std::vector<double> sums(static_cast<std::size_t>(kK) * kD);
  std::vector<std::size_t> counts(kK);
  for (int it = 0; it < iterations; ++it) {
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      assign[i] = nearest(points.data() + i * kD, centroids);
      err += assign[i].dist;
    }
    trace.push_back(err / static_cast<double>(n));

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto w = static_cast<std::size_t>(assign[i].word);
      ++counts[w];
      for (int j = 0; j < kD; ++j) sums[w * kD + static_cast<std::size_t>(j)] += points[i * kD + static_cast<std::size_t>(j)];
    }
    for (int c = 0; c < kK; ++c) {
      const auto cu = static_cast<std::size_t>(c);
      if (counts[cu] == 0) {
        // Re-seed from the point currently worst served.
        std::size_t far = 0;
        for (std::size_t i = 1; i < n; ++i) {
          if (assign[i].dist > assign[far].dist) far = i;
        }
        std::copy_n(points.data() + far * kD, kD, centroids + c * kD);
        assign[far].dist = 0.0f;
        continue;
      }
      for (int j = 0; j < kD; ++j) {
        centroids[c * kD + j] = static_cast<float>(sums[cu * kD + static_cast<std::size_t>(j)] /
                                                   static_cast<double>(counts[cu]));
      }
    }
  }
  return trace;
}

}  // namespace

PQCodebook train_codebooks(const DescriptorPool& sample, std::uint32_t seed,
                           const PQTrainOptions& options, std::vector<double>* objective_trace) {
  if (sample.size() < static_cast<std::size_t>(kK)) {
    throw Error(ErrorCode::kInsufficientData, "product quantizer needs at least 128 training vectors");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> rows(sample.size());
  std::iota(rows.begin(), rows.end(), 0);
  if (options.max_training_vectors >= kK && rows.size() > options.max_training_vectors) {
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(options.max_training_vectors);
    std::sort(rows.begin(), rows.end());
  }
  const std::size_t n = rows.size();

  PQCodebook cb;
  cb.train_seed = seed;
  cb.centroids.assign(static_cast<std::size_t>(kM) * kK * kD, 0.0f);
  std::vector<double> total;
  std::vector<float> points(n * kD);
  for (int sub = 0; sub < kM; ++sub) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto v = sample.vector(rows[i]);
      std::copy_n(v.data() + sub * kD, kD, points.data() + i * kD);
    }
    std::mt19937_64 sub_rng(seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(sub + 1));
    const auto trace = kmeans(points, n, sub_rng, options.iterations,
                              cb.centroids.data() + static_cast<std::size_t>(sub) * kK * kD);
    if (total.empty()) total.assign(trace.size(), 0.0);
    for (std::size_t i = 0; i < trace.size(); ++i) total[i] += trace[i];
  }
  if (objective_trace) *objective_trace = std::move(total);
  return cb;
}

PQCode encode(const PQCodebook& codebook, std::span<const float, kDescriptorDim> d) {
  PQCode code{};
  for (int sub = 0; sub < kM; ++sub) {
    const auto a = nearest(d.data() + sub * kD, codebook.centroids.data() + static_cast<std::size_t>(sub) * kK * kD);
    code[static_cast<std::size_t>(sub)] = static_cast<std::uint8_t>(a.word);
  }
  return code;
}

Descriptor reconstruct(const PQCodebook& codebook, const PQCode& code) {
  Descriptor out{};
  for (int sub = 0; sub < kM; ++sub) {
    const auto c = codebook.centroid(sub, code[static_cast<std::size_t>(sub)]);
    std::copy(c.begin(), c.end(), out.begin() + sub * kD);
  }
  return out;
}

NeighborList pq_knn_search(const PQCodebook& codebook, std::span<const PQCode> codes,
                           std::span<const float, kDescriptorDim> q, std::size_t k) {
  std::array<float, static_cast<std::size_t>(kM) * kK> table;
  for (int sub = 0; sub < kM; ++sub) {
    for (int w = 0; w < kK; ++w) {
      table[static_cast<std::size_t>(sub * kK + w)] =
          sub_distance(q.data() + sub * kD, codebook.centroid(sub, w).data());
    }
  }
  detail::TopK best(std::min(k, codes.size()));
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const PQCode& code = codes[i];
    float dist = 0.0f;
    for (int sub = 0; sub < kM; ++sub) dist += table[static_cast<std::size_t>(sub * kK + code[static_cast<std::size_t>(sub)])];
    best.push(dist, static_cast<std::uint32_t>(i));
  }
  return best.finish();
}

PQIndex::PQIndex(PQCodebook codebook, std::vector<PQCode> codes, std::shared_ptr<const DescriptorPool> pool)
    : codebook_(std::move(codebook)), codes_(std::move(codes)), pool_(std::move(pool)) {
  if (!pool_ || pool_->size() != codes_.size()) {
    throw Error(ErrorCode::kIncompatible, "code pool does not match the descriptor pool");
  }
}

PQIndex PQIndex::build(std::shared_ptr<const DescriptorPool> pool, std::uint32_t seed,
                       const PQTrainOptions& options) {
  if (!pool || pool->empty()) throw Error(ErrorCode::kEmptyPool, "cannot index an empty descriptor pool");
  PQCodebook cb = train_codebooks(*pool, seed, options);
  std::vector<PQCode> codes;
  codes.reserve(pool->size());
  for (std::size_t i = 0; i < pool->size(); ++i) codes.push_back(encode(cb, pool->vector(i)));
  return PQIndex(std::move(cb), std::move(codes), std::move(pool));
}

// ---------------------------------------------------------------------------
// Files

namespace {
constexpr std::string_view kCodebookMagic = "HSPQ";
constexpr std::string_view kCodePoolMagic = "HSPC";
constexpr std::uint32_t kPqVersion = 1;

std::uint8_t cap_u8(int v) { return static_cast<std::uint8_t>(std::min(v, 255)); }
}  // namespace

std::vector<std::uint8_t> encode_codebook(const PQCodebook& codebook) {
  detail::ByteWriter w;
  w.magic(kCodebookMagic);
  w.u32(kPqVersion);
  w.u8(cap_u8(kM));
  w.u8(cap_u8(kD));
  w.u8(cap_u8(kK));
  w.u32(codebook.train_seed);
  for (float v : codebook.centroids) w.f32(v);
  return std::move(w.bytes());
}

PQCodebook decode_codebook(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "codebook");
  r.expect_magic(kCodebookMagic);
  if (r.u32() != kPqVersion) r.fail("unsupported version");
  if (r.u8() != kM || r.u8() != kD || r.u8() != kK) r.fail("unsupported quantizer geometry");
  PQCodebook cb;
  cb.train_seed = r.u32();
  cb.centroids.resize(static_cast<std::size_t>(kM) * kK * kD);
  for (float& v : cb.centroids) {
    v = r.f32();
    if (!std::isfinite(v)) r.fail("non-finite centroid");
  }
  return cb;
}

void write_codebook(const PQCodebook& codebook, const std::filesystem::path& path) {
  const auto bytes = encode_codebook(codebook);
  detail::write_file_atomic(path, bytes);
}

PQCodebook read_codebook(const std::filesystem::path& path) {
  return decode_codebook(detail::read_file(path));
}

std::vector<std::uint8_t> encode_code_pool(std::span<const PQCode> codes) {
  detail::ByteWriter w;
  w.magic(kCodePoolMagic);
  w.u32(kPqVersion);
  w.u64(codes.size());
  for (const PQCode& c : codes) w.raw(c);
  return std::move(w.bytes());
}

std::vector<PQCode> decode_code_pool(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "code pool");
  r.expect_magic(kCodePoolMagic);
  if (r.u32() != kPqVersion) r.fail("unsupported version");
  const std::uint64_t count = r.u64();
  if (r.remaining() / sizeof(PQCode) < count) r.fail("truncated");
  std::vector<PQCode> codes(count);
  for (PQCode& c : codes) {
    const auto raw = r.raw(c.size());
    std::copy(raw.begin(), raw.end(), c.begin());
    for (std::uint8_t v : c) {
      if (v >= kK) r.fail("word index out of range");
    }
  }
  return codes;
}

}  // namespace stripeid
