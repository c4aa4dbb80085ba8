#include <benchmark/benchmark.h>

#include <memory>
#include <vector>

#include "stripeid/ann_index.hpp"
#include "stripeid/features.hpp"
#include "stripeid/pq_index.hpp"
#include "stripeid/synthetic.hpp"

namespace {

using namespace stripeid;

constexpr int kWidth = 512;
constexpr int kHeight = 384;

GrayImage render(std::uint64_t label, std::uint64_t view) {
  const GrayImage field = synth_field(label, kWidth * 2, kHeight * 2);
  SynthWarp warp;
  warp.angle_rad = 0.05 * static_cast<double>(view);
  return synth_render(field, kWidth, kHeight, warp, GrayImage{}, 0.0, 0.02, view);
}

// Descriptor pool built from real extractions so the trees see realistic data.
struct Corpus {
  std::shared_ptr<DescriptorPool> pool = std::make_shared<DescriptorPool>();
  std::vector<Descriptor> queries;

  explicit Corpus(int labels) {
    for (int l = 0; l < labels; ++l) {
      const FeatureSet f = extract_features(render(l, 0), Roi{0, 0, kWidth, kHeight}, DescriptorVariant::kRootSift);
      pool->add_image(ImageId{static_cast<std::uint32_t>(l + 1)}, f.descriptors);
    }
    const FeatureSet q = extract_features(render(0, 3), Roi{0, 0, kWidth, kHeight}, DescriptorVariant::kRootSift);
    queries = q.descriptors;
  }
};

const Corpus& corpus() {
  static const Corpus c(20);
  return c;
}

void BM_ExtractFeatures(benchmark::State& state) {
  const GrayImage img = render(1, 1);
  std::size_t n = 0;
  for (auto _ : state) {
    const FeatureSet f = extract_features(img, Roi{0, 0, kWidth, kHeight}, DescriptorVariant::kRootSift);
    n = f.keypoints.size();
    benchmark::DoNotOptimize(n);
  }
  state.counters["features"] = static_cast<double>(n);
}
BENCHMARK(BM_ExtractFeatures)->Unit(benchmark::kMillisecond);

void BM_KdForestSearch(benchmark::State& state) {
  const Corpus& c = corpus();
  const auto forest = KdForest::build(c.pool, 4, 1);
  const auto checks = static_cast<std::size_t>(state.range(0));
  std::size_t i = 0;
  for (auto _ : state) {
    const Descriptor& q = c.queries[i++ % c.queries.size()];
    benchmark::DoNotOptimize(forest.search(std::span<const float, kDescriptorDim>(q), 5, checks));
  }
  state.counters["pool"] = static_cast<double>(c.pool->size());
}
BENCHMARK(BM_KdForestSearch)->Arg(32)->Arg(128)->Arg(512)->Unit(benchmark::kMicrosecond);

void BM_BruteForceSearch(benchmark::State& state) {
  const Corpus& c = corpus();
  std::size_t i = 0;
  for (auto _ : state) {
    const Descriptor& q = c.queries[i++ % c.queries.size()];
    benchmark::DoNotOptimize(brute_force_knn(*c.pool, std::span<const float, kDescriptorDim>(q), 5));
  }
}
BENCHMARK(BM_BruteForceSearch)->Unit(benchmark::kMicrosecond);

void BM_PqSearch(benchmark::State& state) {
  const Corpus& c = corpus();
  const PQIndex index = PQIndex::build(c.pool, 1);
  std::size_t i = 0;
  for (auto _ : state) {
    const Descriptor& q = c.queries[i++ % c.queries.size()];
    benchmark::DoNotOptimize(index.search(std::span<const float, kDescriptorDim>(q), 5));
  }
}
BENCHMARK(BM_PqSearch)->Unit(benchmark::kMicrosecond);

void BM_PqTrain(benchmark::State& state) {
  const Corpus& c = corpus();
  for (auto _ : state) benchmark::DoNotOptimize(PQIndex::build(c.pool, 1));
}
BENCHMARK(BM_PqTrain)->Unit(benchmark::kMillisecond)->Iterations(1);

}  // namespace

BENCHMARK_MAIN();
