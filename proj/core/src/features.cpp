#include "stripeid/features.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "stripeid/error.hpp"

namespace stripeid {

double FeatureSet::diagonal() const noexcept {
  return std::hypot(static_cast<double>(roi_width), static_cast<double>(roi_height));
}

GrayImage preprocess_roi(const GrayImage& image, const Roi& roi) {
  if (roi.width <= 0 || roi.height <= 0) {
    throw Error(ErrorCode::kInvalidRoi, "ROI has zero area");
  }
  const int x0 = std::max(roi.x, 0);
  const int y0 = std::max(roi.y, 0);
  const int x1 = std::min(roi.x + roi.width, image.width());
  const int y1 = std::min(roi.y + roi.height, image.height());
  if (x1 <= x0 || y1 <= y0) {
    throw Error(ErrorCode::kInvalidRoi, "ROI does not intersect the image");
  }
  const int cw = x1 - x0;
  const int ch = y1 - y0;
  GrayImage crop(cw, ch);
  for (int y = 0; y < ch; ++y) {
    for (int x = 0; x < cw; ++x) crop.at(x, y) = image.at(x0 + x, y0 + y);
  }
  const double scale = std::min(static_cast<double>(kStandardSize) / std::max(cw, ch), kMaxUpscale);
  const int w = std::max(1, static_cast<int>(std::lround(cw * scale)));
  const int h = std::max(1, static_cast<int>(std::lround(ch * scale)));
  return resize(crop, w, h);
}

// ---------------------------------------------------------------------------
// Detector

namespace {

struct ResponseMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  float at(int x, int y) const {
    return values[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(x)];
  }
};

ResponseMap hessian_response(const GrayImage& smoothed, double sigma) {
  ResponseMap r{smoothed.width(), smoothed.height(), {}};
  r.values.assign(static_cast<std::size_t>(r.width) * static_cast<std::size_t>(r.height), 0.0f);
  const double norm = std::pow(sigma, 4.0);
  for (int y = 1; y + 1 < r.height; ++y) {
    for (int x = 1; x + 1 < r.width; ++x) {
      const double c = smoothed.at(x, y);
      const double lxx = smoothed.at(x + 1, y) - 2.0 * c + smoothed.at(x - 1, y);
      const double lyy = smoothed.at(x, y + 1) - 2.0 * c + smoothed.at(x, y - 1);
      const double lxy = 0.25 * (smoothed.at(x + 1, y + 1) - smoothed.at(x + 1, y - 1) -
                                 smoothed.at(x - 1, y + 1) + smoothed.at(x - 1, y - 1));
      r.values[static_cast<std::size_t>(y) * static_cast<std::size_t>(r.width) +
               static_cast<std::size_t>(x)] = static_cast<float>(norm * (lxx * lyy - lxy * lxy));
    }
  }
  return r;
}

// Offset of the vertex of the parabola through (-1, lo), (0, mid), (1, hi).
double parabola_peak(double lo, double mid, double hi) {
  const double denom = lo - 2.0 * mid + hi;
  if (denom >= 0.0) return 0.0;
  return std::clamp(0.5 * (lo - hi) / denom, -0.5, 0.5);
}

bool strict_maximum(const std::vector<ResponseMap>& r, std::size_t s, int x, int y) {
  const float v = r[s].at(x, y);
  for (std::size_t ds = s - 1; ds <= s + 1; ++ds) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (ds == s && dx == 0 && dy == 0) continue;
        if (!(v > r[ds].at(x + dx, y + dy))) return false;
      }
    }
  }
  return true;
}

// Second-moment matrix of `deriv` around (x, y) under a Gaussian window.
Eigen::Matrix2d second_moment(const GrayImage& deriv, int x, int y, double window_sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * window_sigma));
  const double inv = 1.0 / (2.0 * window_sigma * window_sigma);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const int px = x + dx;
      const int py = y + dy;
      const double gx = 0.5 * (deriv.clamped(px + 1, py) - deriv.clamped(px - 1, py));
      const double gy = 0.5 * (deriv.clamped(px, py + 1) - deriv.clamped(px, py - 1));
      const double w = std::exp(-(dx * dx + dy * dy) * inv);
      sxx += w * gx * gx;
      sxy += w * gx * gy;
      syy += w * gy * gy;
    }
  }
  Eigen::Matrix2d mu;
  mu << sxx, sxy, sxy, syy;
  return mu;
}

// Unit-determinant ellipse covariance from the inverse second-moment matrix;
// empty when the structure is degenerate or too elongated.
std::optional<Eigen::Matrix2d> adapted_covariance(const Eigen::Matrix2d& mu, double max_anisotropy) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(mu);
  const Eigen::Vector2d lambda = eig.eigenvalues();
  if (!(lambda(0) > 0.0)) return std::nullopt;
  if (lambda(1) / lambda(0) > max_anisotropy * max_anisotropy) return std::nullopt;
  Eigen::Matrix2d cov = eig.eigenvectors() * lambda.cwiseInverse().asDiagonal() *
                        eig.eigenvectors().transpose();
  return cov / std::sqrt(cov.determinant());
}

}  // namespace

std::vector<EllipseKeypoint> detect_keypoints(const GrayImage& image, const DetectorParams& params) {
  if (image.width() < 16 || image.height() < 16) {
    throw Error(ErrorCode::kTooSmall, "detector needs at least 16x16 pixels");
  }
  const int per_octave = params.scales_per_octave;
  const double step = std::pow(2.0, 1.0 / per_octave);
  // Derivatives for shape adaptation use half the detection scale, which is
  // exactly `per_octave` levels down.
  const int lowest = 1 - per_octave;
  const int highest = per_octave + 1;
  auto sigma_at = [&](int s) { return params.initial_sigma * std::pow(step, s); };

  std::vector<EllipseKeypoint> keypoints;
  GrayImage base = image;
  for (int octave = 0; octave < params.octaves; ++octave) {
    if (base.width() < 16 || base.height() < 16) break;
    const double octave_scale = std::ldexp(1.0, octave);

    std::vector<GrayImage> levels;
    for (int s = lowest; s <= highest; ++s) levels.push_back(gaussian_blur(base, sigma_at(s)));
    auto level = [&](int s) -> const GrayImage& {
      return levels[static_cast<std::size_t>(s - lowest)];
    };

    std::vector<ResponseMap> response;
    for (int s = 0; s <= highest; ++s) response.push_back(hessian_response(level(s), sigma_at(s)));

    const int border = 2;
    for (int s = 1; s <= per_octave; ++s) {
      const auto si = static_cast<std::size_t>(s);
      for (int y = border; y < base.height() - border; ++y) {
        for (int x = border; x < base.width() - border; ++x) {
          const float v = response[si].at(x, y);
          if (!(v > params.threshold) || !strict_maximum(response, si, x, y)) continue;

          const double dx = parabola_peak(response[si].at(x - 1, y), v, response[si].at(x + 1, y));
          const double dy = parabola_peak(response[si].at(x, y - 1), v, response[si].at(x, y + 1));
          const double ds = parabola_peak(response[si - 1].at(x, y), v, response[si + 1].at(x, y));
          const double sigma = params.initial_sigma * std::pow(step, s + ds);

          const auto cov = adapted_covariance(
              second_moment(level(s - per_octave), x, y, 1.5 * sigma_at(s)), params.max_anisotropy);
          if (!cov) continue;
          const double radius = params.ellipse_scale * sigma * octave_scale;
          const AffineShape shape = AffineShape::from_covariance(*cov * (radius * radius));
          if (!shape.valid() || shape.det() < 1e-9) continue;

          EllipseKeypoint kp;
          kp.x = static_cast<float>((x + dx + 0.5) * octave_scale - 0.5);
          kp.y = static_cast<float>((y + dy + 0.5) * octave_scale - 0.5);
          kp.shape = shape;
          if (kp.x < 0.0f || kp.y < 0.0f || kp.x > image.width() - 1 || kp.y > image.height() - 1) {
            continue;
          }
          keypoints.push_back(kp);
        }
      }
    }
    base = downsample_half(base);
  }
  return keypoints;
}

// ---------------------------------------------------------------------------
// Descriptors

namespace {

constexpr int kPatchSize = 41;
constexpr int kPatchHalf = kPatchSize / 2;
constexpr double kMagnification = 3.0;
constexpr int kSpatialBins = 4;
constexpr int kOrientationBins = 8;
constexpr float kSiftClamp = 0.2f;
constexpr double kPyramidBlur = 0.8;

void l2_normalize(Descriptor& d) {
  double sum = 0.0;
  for (float v : d) sum += static_cast<double>(v) * v;
  if (sum <= 0.0) return;
  const double inv = 1.0 / std::sqrt(sum);
  for (float& v : d) v = static_cast<float>(v * inv);
}

}  // namespace

DescriptorExtractor::DescriptorExtractor(const GrayImage& image)
    : width_(image.width()), height_(image.height()) {
  GrayImage base = image;
  while (true) {
    octaves_.push_back(gaussian_blur(base, kPyramidBlur));
    if (base.width() < 16 || base.height() < 16) break;
    base = downsample_half(base);
  }
}

std::vector<float> DescriptorExtractor::normalized_patch(const EllipseKeypoint& kp) const {
  if (!kp.shape.valid()) throw Error(ErrorCode::kInvalidShape, "invalid keypoint shape");
  const double a = kp.shape.a, b = kp.shape.b, c = kp.shape.c;
  const double ext_x = kMagnification * a;
  const double ext_y = kMagnification * (std::abs(b) + c);
  if (kp.x + ext_x < 0.0 || kp.x - ext_x > width_ - 1 || kp.y + ext_y < 0.0 ||
      kp.y - ext_y > height_ - 1) {
    throw Error(ErrorCode::kOutOfBounds, "measurement region lies outside the image");
  }

  // Sample spacing in source pixels picks the pyramid octave.
  const double spacing = kMagnification * std::sqrt(a * c) / kPatchHalf;
  int octave = spacing > 1.0 ? static_cast<int>(std::floor(std::log2(spacing))) : 0;
  octave = std::clamp(octave, 0, static_cast<int>(octaves_.size()) - 1);
  const GrayImage& src = octaves_[static_cast<std::size_t>(octave)];
  const double inv_scale = std::ldexp(1.0, -octave);

  std::vector<float> patch(static_cast<std::size_t>(kPatchSize * kPatchSize));
  const double unit = kMagnification / kPatchHalf;
  for (int j = 0; j < kPatchSize; ++j) {
    const double ny = (j - kPatchHalf) * unit;
    for (int i = 0; i < kPatchSize; ++i) {
      const double nx = (i - kPatchHalf) * unit;
      const double px = kp.x + a * nx;
      const double py = kp.y + b * nx + c * ny;
      patch[static_cast<std::size_t>(j * kPatchSize + i)] =
          src.bilinear((px + 0.5) * inv_scale - 0.5, (py + 0.5) * inv_scale - 0.5);
    }
  }
  return patch;
}

Descriptor DescriptorExtractor::extract(const EllipseKeypoint& kp, DescriptorVariant variant) const {
  const std::vector<float> patch = normalized_patch(kp);
  auto px = [&](int i, int j) { return patch[static_cast<std::size_t>(j * kPatchSize + i)]; };

  std::array<double, kDescriptorDim> hist{};
  const double window_sigma = 0.5 * (kPatchSize - 1);
  const double bin_width = static_cast<double>(kPatchSize) / kSpatialBins;
  for (int j = 1; j < kPatchSize - 1; ++j) {
    for (int i = 1; i < kPatchSize - 1; ++i) {
      const double gx = px(i + 1, j) - px(i - 1, j);
      const double gy = px(i, j + 1) - px(i, j - 1);
      const double mag = std::hypot(gx, gy);
      if (mag <= 0.0) continue;
      const double ri = i - kPatchHalf;
      const double rj = j - kPatchHalf;
      const double weight =
          mag * std::exp(-(ri * ri + rj * rj) / (2.0 * window_sigma * window_sigma));

      double angle = std::atan2(gy, gx);
      if (angle < 0.0) angle += 2.0 * std::numbers::pi;
      const double ob = angle * kOrientationBins / (2.0 * std::numbers::pi);
      const double bx = (i + 0.5) / bin_width - 0.5;
      const double by = (j + 0.5) / bin_width - 0.5;

      const int ox0 = static_cast<int>(std::floor(bx));
      const int oy0 = static_cast<int>(std::floor(by));
      const int oo0 = static_cast<int>(std::floor(ob));
      const double fx = bx - ox0, fy = by - oy0, fo = ob - oo0;
      for (int ty = 0; ty < 2; ++ty) {
        const int yb = oy0 + ty;
        if (yb < 0 || yb >= kSpatialBins) continue;
        const double wy = ty ? fy : 1.0 - fy;
        for (int tx = 0; tx < 2; ++tx) {
          const int xb = ox0 + tx;
          if (xb < 0 || xb >= kSpatialBins) continue;
          const double wx = tx ? fx : 1.0 - fx;
          for (int to = 0; to < 2; ++to) {
            const int o = (oo0 + to) % kOrientationBins;
            const double wo = to ? fo : 1.0 - fo;
            hist[static_cast<std::size_t>((yb * kSpatialBins + xb) * kOrientationBins + o)] +=
                weight * wx * wy * wo;
          }
        }
      }
    }
  }

  Descriptor d{};
  std::transform(hist.begin(), hist.end(), d.begin(), [](double v) { return static_cast<float>(v); });
  l2_normalize(d);
  for (float& v : d) v = std::min(v, kSiftClamp);
  l2_normalize(d);
  if (variant == DescriptorVariant::kRootSift) return root_sift(d);
  return d;
}

Descriptor extract_descriptor(const GrayImage& image, const EllipseKeypoint& kp,
                              DescriptorVariant variant) {
  return DescriptorExtractor(image).extract(kp, variant);
}

Descriptor root_sift(std::span<const float, kDescriptorDim> sift) {
  double l1 = 0.0;
  for (float v : sift) {
    if (v < 0.0f) throw Error(ErrorCode::kInvalidInput, "SIFT components must be non-negative");
    l1 += v;
  }
  Descriptor out{};
  if (l1 <= 0.0) return out;
  for (std::size_t i = 0; i < kDescriptorDim; ++i) {
    out[i] = static_cast<float>(std::sqrt(sift[i] / l1));
  }
  return out;
}

Descriptor sift_from_root_sift(std::span<const float, kDescriptorDim> root) {
  Descriptor out{};
  for (std::size_t i = 0; i < kDescriptorDim; ++i) out[i] = root[i] * root[i];
  l2_normalize(out);
  return out;
}

FeatureSet extract_features(const GrayImage& image, const Roi& roi, DescriptorVariant variant) {
  const GrayImage pre = preprocess_roi(image, roi);
  FeatureSet fs;
  fs.roi_width = pre.width();
  fs.roi_height = pre.height();
  fs.variant = variant;
  fs.keypoints = detect_keypoints(pre);
  const DescriptorExtractor extractor(pre);
  fs.descriptors.reserve(fs.keypoints.size());
  for (const auto& kp : fs.keypoints) fs.descriptors.push_back(extractor.extract(kp, variant));
  return fs;
}

FeatureSet convert_variant(FeatureSet features, DescriptorVariant variant) {
  if (features.variant == variant) return features;
  for (auto& d : features.descriptors) {
    d = variant == DescriptorVariant::kRootSift ? root_sift(d) : sift_from_root_sift(d);
  }
  features.variant = variant;
  return features;
}

}  // namespace stripeid
