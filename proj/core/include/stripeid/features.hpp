#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "stripeid/geometry.hpp"
#include "stripeid/image.hpp"
#include "stripeid/types.hpp"

namespace stripeid {

inline constexpr std::size_t kDescriptorDim = 128;
using Descriptor = std::array<float, kDescriptorDim>;

enum class DescriptorVariant : std::uint8_t { kSift = 0, kRootSift = 1 };

/// Keypoints and descriptors of one preprocessed ROI; the two lists are
/// parallel and keypoint coordinates live in the preprocessed frame.
struct FeatureSet {
  std::vector<EllipseKeypoint> keypoints;
  std::vector<Descriptor> descriptors;
  int roi_width = 0;
  int roi_height = 0;
  DescriptorVariant variant = DescriptorVariant::kRootSift;

  std::size_t size() const noexcept { return keypoints.size(); }
  double diagonal() const noexcept;

  friend bool operator==(const FeatureSet&, const FeatureSet&) = default;
};

/// Preprocessed ROIs have this many pixels on their long side, unless that
/// would need more than kMaxUpscale magnification.
inline constexpr int kStandardSize = 512;
inline constexpr double kMaxUpscale = 2.0;

struct DetectorParams {
  int octaves = 3;
  int scales_per_octave = 4;
  double initial_sigma = 1.6;
  /// On the scale-normalized determinant of the Hessian, sigma^4 * det(H).
  double threshold = 0.001;
  /// Ellipse radius in units of the detection scale.
  double ellipse_scale = 2.0;
  /// Ellipses more elongated than this axis ratio are dropped as edge-like.
  double max_anisotropy = 5.0;
};

/// Grayscale crop of `roi` (clipped to the image) resized so the long side is
/// kStandardSize, preserving aspect ratio. Throws kInvalidRoi when the clipped
/// ROI is empty.
GrayImage preprocess_roi(const GrayImage& image, const Roi& roi);

/// Strict 3x3x3 maxima of the scale-normalized determinant-of-Hessian
/// response over a three-octave pyramid, each with an elliptical shape from
/// one second-moment adaptation step. Deterministic; throws kTooSmall below
/// 16x16.
std::vector<EllipseKeypoint> detect_keypoints(const GrayImage& image,
                                              const DetectorParams& params = {});

/// Samples 4x4x8 gradient histograms over the affinely normalized 41x41
/// patch (measurement region: 3x the keypoint ellipse). Holds a small
/// anti-aliasing pyramid so many keypoints can share it.
class DescriptorExtractor {
 public:
  explicit DescriptorExtractor(const GrayImage& image);

  /// Throws kOutOfBounds when the measurement region misses the image.
  Descriptor extract(const EllipseKeypoint& kp, DescriptorVariant variant) const;

  /// The raw 41x41 normalized patch (row-major) used by extract().
  std::vector<float> normalized_patch(const EllipseKeypoint& kp) const;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<GrayImage> octaves_;
};

Descriptor extract_descriptor(const GrayImage& image, const EllipseKeypoint& kp,
                              DescriptorVariant variant);

/// sqrt(v / |v|_1) component-wise; zero maps to zero. Throws kInvalidInput
/// on negative components.
Descriptor root_sift(std::span<const float, kDescriptorDim> sift);

/// Inverse of root_sift up to L2 normalization: recovers the unit SIFT vector.
Descriptor sift_from_root_sift(std::span<const float, kDescriptorDim> root);

/// Full pipeline: preprocess, detect, describe.
FeatureSet extract_features(const GrayImage& image, const Roi& roi, DescriptorVariant variant);

/// Re-express every descriptor in another variant (no pixels needed).
FeatureSet convert_variant(FeatureSet features, DescriptorVariant variant);

// Sidecar ("HSFT" v1) files: little-endian header then one record per
// keypoint of f32 x, y, a, b, c and 128 f32 descriptor components.
std::vector<std::uint8_t> encode_feature_file(const FeatureSet& features);
FeatureSet decode_feature_file(std::span<const std::uint8_t> bytes);
void write_feature_file(const FeatureSet& features, const std::filesystem::path& path);
FeatureSet read_feature_file(const std::filesystem::path& path);

}  // namespace stripeid
