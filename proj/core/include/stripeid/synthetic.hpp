#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>

#include "stripeid/catalog.hpp"
#include "stripeid/image.hpp"

namespace stripeid {

struct SynthParams {
  int n_labels = 50;
  int images_per_label = 3;
  /// Scales rotation (up to 10 degrees), per-axis scale (0.9 to 1.1) and
  /// translation (up to 16 px) together; 0 disables warping.
  double warp_magnitude = 1.0;
  /// Standard deviation of additive Gaussian noise, intensities in [0, 1].
  double noise = 0.03;
  /// Weight in [0, 1) of a fresh per-image pattern blended into the
  /// individual's own (mud, shadows, skin folds between sightings).
  double clutter = 0.35;
  std::uint64_t seed = 0;
  int width = 512;
  int height = 384;
};

/// Warp applied to one rendering of a label's texture.
struct SynthWarp {
  double angle_rad = 0.0;
  double scale_x = 1.0;
  double scale_y = 1.0;
  double tx = 0.0;
  double ty = 0.0;
};

/// Band-passed white noise with unit standard deviation; the pattern of one
/// individual before shading.
GrayImage synth_field(std::uint64_t seed, int width, int height);

/// Samples the centre of `field` under `warp`, blends in `clutter_field`
/// (same frame as the output, may be empty) with weight `clutter`, shades
/// the result into stripes through a soft threshold, then adds noise.
GrayImage synth_render(const GrayImage& field, int width, int height, const SynthWarp& warp,
                       const GrayImage& clutter_field, double clutter, double noise, std::uint64_t noise_seed);

/// Writes images/<label>_<n>.pgm and a catalog with ground-truth labels into
/// `out_dir` (which must not hold a catalog yet). Deterministic byte for byte.
std::unique_ptr<Catalog> gen_synthetic(const SynthParams& params, const std::filesystem::path& out_dir);

}  // namespace stripeid
