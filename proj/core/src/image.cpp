#include "stripeid/image.hpp"

#include <algorithm>
#include <cmath>

#include "stripeid/error.hpp"

namespace stripeid {

GrayImage::GrayImage(int width, int height, float fill)
    : width_(width), height_(height) {
  if (width < 0 || height < 0) {
    throw Error(ErrorCode::kInvalidInput, "negative image dimensions");
  }
  pixels_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
}

float GrayImage::clamped(int x, int y) const {
  x = std::clamp(x, 0, width_ - 1);
  y = std::clamp(y, 0, height_ - 1);
  return at(x, y);
}

float GrayImage::bilinear(double x, double y) const {
  x = std::clamp(x, 0.0, static_cast<double>(width_ - 1));
  y = std::clamp(y, 0.0, static_cast<double>(height_ - 1));
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, width_ - 1);
  const int y1 = std::min(y0 + 1, height_ - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
  const double bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
  return static_cast<float>(top * (1.0 - fy) + bottom * fy);
}

namespace {

std::vector<float> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * i * i / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = static_cast<float>(w);
    sum += w;
  }
  for (auto& w : kernel) w = static_cast<float>(w / sum);
  return kernel;
}

// One-dimensional resampling as a sparse weight list per output sample.
struct Tap {
  int source;
  float weight;
};

std::vector<std::vector<Tap>> resample_taps(int in, int out) {
  std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(out) / in;
  if (scale < 1.0) {
    const double footprint = static_cast<double>(in) / out;
    for (int u = 0; u < out; ++u) {
      const double lo = u * footprint;
      const double hi = lo + footprint;
      auto& t = taps[static_cast<std::size_t>(u)];
      for (int i = static_cast<int>(std::floor(lo)); i < static_cast<int>(std::ceil(hi)); ++i) {
        const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
        if (overlap > 0.0) {
          t.push_back({std::clamp(i, 0, in - 1), static_cast<float>(overlap / footprint)});
        }
      }
    }
  } else {
    for (int u = 0; u < out; ++u) {
      double src = (u + 0.5) / scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const int i0 = static_cast<int>(src);
      const int i1 = std::min(i0 + 1, in - 1);
      const double f = src - i0;
      auto& t = taps[static_cast<std::size_t>(u)];
      t.push_back({i0, static_cast<float>(1.0 - f)});
      if (f > 0.0) t.push_back({i1, static_cast<float>(f)});
    }
  }
  return taps;
}

}  // namespace

GrayImage gaussian_blur(const GrayImage& image, double sigma) {
  if (sigma <= 0.0 || image.empty()) return image;
  const auto kernel = gaussian_kernel(sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  const int w = image.width();
  const int h = image.height();

  GrayImage tmp(w, h);
  std::vector<float> row(static_cast<std::size_t>(w + 2 * radius));
  for (int y = 0; y < h; ++y) {
    for (int x = -radius; x < w + radius; ++x) {
      row[static_cast<std::size_t>(x + radius)] = image.clamped(x, y);
    }
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      const float* src = &row[static_cast<std::size_t>(x)];
      for (std::size_t k = 0; k < kernel.size(); ++k) acc += kernel[k] * src[k];
      tmp.at(x, y) = acc;
    }
  }

  GrayImage out(w, h);
  std::vector<float> acc(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    std::fill(acc.begin(), acc.end(), 0.0f);
    for (int k = -radius; k <= radius; ++k) {
      const int sy = std::clamp(y + k, 0, h - 1);
      const float wk = kernel[static_cast<std::size_t>(k + radius)];
      const float* src = &tmp.pixels()[static_cast<std::size_t>(sy) * static_cast<std::size_t>(w)];
      for (int x = 0; x < w; ++x) acc[static_cast<std::size_t>(x)] += wk * src[x];
    }
    std::copy(acc.begin(), acc.end(),
              out.pixels().begin() + static_cast<std::ptrdiff_t>(y) * w);
  }
  return out;
}

GrayImage downsample_half(const GrayImage& image) {
  const int w = image.width() / 2;
  const int h = image.height() / 2;
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out.at(x, y) = 0.25f * (image.at(2 * x, 2 * y) + image.at(2 * x + 1, 2 * y) +
                              image.at(2 * x, 2 * y + 1) + image.at(2 * x + 1, 2 * y + 1));
    }
  }
  return out;
}

GrayImage resize(const GrayImage& image, int width, int height) {
  if (width <= 0 || height <= 0 || image.empty()) {
    throw Error(ErrorCode::kInvalidInput, "resize to empty size");
  }
  if (width == image.width() && height == image.height()) return image;

  const auto xt = resample_taps(image.width(), width);
  const auto yt = resample_taps(image.height(), height);

  GrayImage horiz(width, image.height());
  for (int y = 0; y < image.height(); ++y) {
    for (int u = 0; u < width; ++u) {
      float acc = 0.0f;
      for (const Tap& t : xt[static_cast<std::size_t>(u)]) acc += t.weight * image.at(t.source, y);
      horiz.at(u, y) = acc;
    }
  }
  GrayImage out(width, height);
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      float acc = 0.0f;
      for (const Tap& t : yt[static_cast<std::size_t>(v)]) acc += t.weight * horiz.at(u, t.source);
      out.at(u, v) = acc;
    }
  }
  return out;
}

}  // namespace stripeid
