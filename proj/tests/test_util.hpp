#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "stripeid/ann_index.hpp"
#include "stripeid/features.hpp"

namespace stripeid::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("stripeid_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline Descriptor random_descriptor(std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Descriptor d{};
  for (float& v : d) v = u(rng);
  return d;
}

inline std::vector<Descriptor> random_descriptors(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Descriptor> out(n);
  for (auto& d : out) d = random_descriptor(rng);
  return out;
}

inline std::shared_ptr<DescriptorPool> random_pool(std::size_t n, std::uint64_t seed, std::uint32_t image = 1) {
  auto pool = std::make_shared<DescriptorPool>();
  const auto ds = random_descriptors(n, seed);
  pool->add_image(ImageId{image}, ds);
  return pool;
}

inline std::span<const float, kDescriptorDim> view(const Descriptor& d) {
  return std::span<const float, kDescriptorDim>(d);
}

// Straight double-precision squared distance, kept apart from the library's.
inline double reference_distance_sq(const float* a, const float* b) {
  double s = 0.0;
  for (std::size_t i = 0; i < kDescriptorDim; ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

}  // namespace stripeid::testing
