#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace stripeid {

/// Single-channel float image, row-major, intensities nominally in [0, 1].
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, float fill = 0.0f);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return pixels_.empty(); }

  float& at(int x, int y) { return pixels_[index(x, y)]; }
  float at(int x, int y) const { return pixels_[index(x, y)]; }

  /// Border-clamped read.
  float clamped(int x, int y) const;

  /// Bilinear sample with clamp-to-edge; pixel centers sit on integers.
  float bilinear(double x, double y) const;

  std::span<float> pixels() noexcept { return pixels_; }
  std::span<const float> pixels() const noexcept { return pixels_; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> pixels_;
};

/// Separable Gaussian blur, kernel truncated at 3 sigma, clamped borders.
GrayImage gaussian_blur(const GrayImage& image, double sigma);

/// 2x2 box average, dimensions floor-halved.
GrayImage downsample_half(const GrayImage& image);

/// Resize to an exact target size. Downscaling integrates over the source
/// footprint of each output pixel; upscaling samples bilinearly.
GrayImage resize(const GrayImage& image, int width, int height);

// Image files. PGM/PPM (binary P5/P6) and PNG are understood; color input is
// converted to luma.
GrayImage load_image(const std::filesystem::path& path);
GrayImage decode_image(std::span<const std::uint8_t> bytes);
void save_pgm(const GrayImage& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_pgm(const GrayImage& image);

}  // namespace stripeid
