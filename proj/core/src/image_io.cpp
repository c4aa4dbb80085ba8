#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "stripeid/error.hpp"
#include "stripeid/image.hpp"

namespace stripeid {
namespace {

bool is_png(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return bytes.size() >= 8 && std::equal(std::begin(kSig), std::end(kSig), bytes.begin());
}

GrayImage decode_png(std::span<const std::uint8_t> bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw Error(ErrorCode::kFormat, std::string("png: ") + img.message);
  }
  img.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw Error(ErrorCode::kFormat, "png: " + msg);
  }
  GrayImage out(static_cast<int>(img.width), static_cast<int>(img.height));
  std::transform(buffer.begin(), buffer.end(), out.pixels().begin(),
                 [](std::uint8_t v) { return v / 255.0f; });
  return out;
}

class PnmReader {
 public:
  explicit PnmReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  int next_int() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
      throw Error(ErrorCode::kFormat, "pnm: malformed header");
    }
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_++] - '0');
      if (value > (1 << 24)) throw Error(ErrorCode::kFormat, "pnm: header value too large");
    }
    return static_cast<int>(value);
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::span<const std::uint8_t> raster() {
    ++pos_;
    if (pos_ > bytes_.size()) throw Error(ErrorCode::kFormat, "pnm: truncated");
    return bytes_.subspan(pos_);
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 2;
};

GrayImage decode_pnm(std::span<const std::uint8_t> bytes) {
  const bool color = bytes[1] == '6';
  PnmReader reader(bytes);
  const int w = reader.next_int();
  const int h = reader.next_int();
  const int maxval = reader.next_int();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
    throw Error(ErrorCode::kFormat, "pnm: invalid dimensions");
  }
  const auto raster = reader.raster();
  const std::size_t channels = color ? 3 : 1;
  const std::size_t sample_bytes = maxval > 255 ? 2 : 1;
  const std::size_t count = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (raster.size() < count * channels * sample_bytes) {
    throw Error(ErrorCode::kFormat, "pnm: truncated raster");
  }
  auto sample = [&](std::size_t i) -> float {
    const std::size_t off = i * sample_bytes;
    const unsigned v = sample_bytes == 2 ? (raster[off] << 8) | raster[off + 1] : raster[off];
    return static_cast<float>(v) / static_cast<float>(maxval);
  };
  GrayImage out(w, h);
  auto px = out.pixels();
  for (std::size_t i = 0; i < count; ++i) {
    if (color) {
      px[i] = 0.299f * sample(3 * i) + 0.587f * sample(3 * i + 1) + 0.114f * sample(3 * i + 2);
    } else {
      px[i] = sample(i);
    }
  }
  return out;
}

}  // namespace

GrayImage decode_image(std::span<const std::uint8_t> bytes) {
  if (is_png(bytes)) return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) {
    return decode_pnm(bytes);
  }
  throw Error(ErrorCode::kFormat, "unsupported image format (expected PNG, PGM or PPM)");
}

GrayImage load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_image(bytes);
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& image) {
  const std::string header = "P5\n" + std::to_string(image.width()) + " " +
                             std::to_string(image.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.pixels().size());
  for (float v : image.pixels()) {
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  }
  return out;
}

void save_pgm(const GrayImage& image, const std::filesystem::path& path) {
  const auto bytes = encode_pgm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write image " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace stripeid
