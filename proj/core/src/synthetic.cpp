#include "stripeid/synthetic.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "stripeid/error.hpp"

namespace stripeid {
namespace fs = std::filesystem;

namespace {
constexpr int kMargin = 64;
constexpr double kMaxRotationDeg = 10.0;
constexpr double kMaxScaleDelta = 0.1;
constexpr double kMaxShift = 16.0;
constexpr double kFineSigma = 7.0;
constexpr double kStripeGain = 2.0;
constexpr std::string_view kIngestTime = "2000-01-01T00:00:00Z";

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}
}  // namespace

GrayImage synth_field(std::uint64_t seed, int width, int height) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  GrayImage noise(width, height);
  for (float& v : noise.pixels()) v = gauss(rng);

  const GrayImage fine = gaussian_blur(noise, kFineSigma);
  const GrayImage coarse = gaussian_blur(noise, 2.0 * kFineSigma);
  GrayImage band(width, height);
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < band.pixels().size(); ++i) {
    band.pixels()[i] = fine.pixels()[i] - coarse.pixels()[i];
    sum_sq += static_cast<double>(band.pixels()[i]) * band.pixels()[i];
  }
  const auto sd = static_cast<float>(std::sqrt(sum_sq / static_cast<double>(band.pixels().size())));
  for (float& v : band.pixels()) v /= sd;
  return band;
}

GrayImage synth_render(const GrayImage& field, int width, int height, const SynthWarp& warp,
                       const GrayImage& clutter_field, double clutter, double noise, std::uint64_t noise_seed) {
  const double cs = std::cos(warp.angle_rad);
  const double sn = std::sin(warp.angle_rad);
  const double cx = 0.5 * (width - 1);
  const double cy = 0.5 * (height - 1);
  const double fcx = 0.5 * (field.width() - 1);
  const double fcy = 0.5 * (field.height() - 1);
  const bool cluttered = clutter > 0.0 && !clutter_field.empty();
  const double w_own = cluttered ? 1.0 - clutter : 1.0;
  const double w_clutter = cluttered ? clutter : 0.0;
  const double norm = std::hypot(w_own, w_clutter);
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  GrayImage out(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dx = (x - cx) * warp.scale_x;
      const double dy = (y - cy) * warp.scale_y;
      const double u = fcx + cs * dx - sn * dy + warp.tx;
      const double v = fcy + sn * dx + cs * dy + warp.ty;
      double f = w_own * field.bilinear(u, v);
      if (cluttered) f += w_clutter * clutter_field.clamped(x, y);
      double value = 0.5 + 0.4 * std::tanh(kStripeGain * f / norm);
      if (noise > 0.0) value += noise * gauss(rng);
      out.at(x, y) = static_cast<float>(std::clamp(value, 0.0, 1.0));
    }
  }
  return out;
}

std::unique_ptr<Catalog> gen_synthetic(const SynthParams& p, const fs::path& out_dir) {
  if (p.n_labels < 2 || p.images_per_label < 2) {
    throw Error(ErrorCode::kInvalidInput, "need at least 2 labels with 2 images each");
  }
  if (p.width < 16 || p.height < 16 || p.warp_magnitude < 0.0 || p.noise < 0.0 || p.clutter < 0.0 ||
      p.clutter >= 1.0) {
    throw Error(ErrorCode::kInvalidInput, "invalid synthetic parameters");
  }
  if (fs::exists(out_dir / "manifest.json")) {
    throw Error(ErrorCode::kInvalidInput, out_dir.string() + " already holds a catalog");
  }
  fs::create_directories(out_dir / "images");
  auto catalog = std::make_unique<Catalog>(out_dir);

  const double deg = std::numbers::pi / 180.0;
  for (int label = 0; label < p.n_labels; ++label) {
    const std::uint64_t label_seed = mix(p.seed, static_cast<std::uint64_t>(label));
    const GrayImage field = synth_field(label_seed, p.width + 2 * kMargin, p.height + 2 * kMargin);
    std::mt19937_64 rng(mix(label_seed, 0x5EED));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const std::string name = fmt::format("individual_{:03d}", label);
    for (int n = 0; n < p.images_per_label; ++n) {
      SynthWarp warp;
      warp.angle_rad = kMaxRotationDeg * deg * p.warp_magnitude * unit(rng);
      warp.scale_x = 1.0 + kMaxScaleDelta * p.warp_magnitude * unit(rng);
      warp.scale_y = 1.0 + kMaxScaleDelta * p.warp_magnitude * unit(rng);
      warp.tx = kMaxShift * p.warp_magnitude * unit(rng);
      warp.ty = kMaxShift * p.warp_magnitude * unit(rng);
      const std::uint64_t noise_seed = mix(label_seed, static_cast<std::uint64_t>(n) + 1);
      GrayImage clutter_field;
      if (p.clutter > 0.0) clutter_field = synth_field(mix(noise_seed, 0xC107E5), p.width, p.height);
      const GrayImage img = synth_render(field, p.width, p.height, warp, clutter_field, p.clutter, p.noise, noise_seed);
      const fs::path file = out_dir / "images" / fmt::format("{}_{}.pgm", name, n);
      save_pgm(img, file);
      catalog->add_image_file(file, std::nullopt, name, std::string(kIngestTime));
    }
  }
  return catalog;
}

}  // namespace stripeid
