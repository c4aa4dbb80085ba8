#include <limits>

#include "binary_io.hpp"
#include "stripeid/features.hpp"

namespace stripeid {

namespace {
constexpr std::string_view kMagic = "HSFT";
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::vector<std::uint8_t> encode_feature_file(const FeatureSet& features) {
  if (features.keypoints.size() != features.descriptors.size()) {
    throw Error(ErrorCode::kInvalidInput, "keypoint/descriptor count mismatch");
  }
  if (features.roi_width < 0 || features.roi_height < 0 ||
      features.roi_width > std::numeric_limits<std::uint16_t>::max() ||
      features.roi_height > std::numeric_limits<std::uint16_t>::max()) {
    throw Error(ErrorCode::kInvalidInput, "ROI size does not fit the sidecar header");
  }
  detail::ByteWriter w;
  w.magic(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(features.size()));
  w.u16(static_cast<std::uint16_t>(features.roi_width));
  w.u16(static_cast<std::uint16_t>(features.roi_height));
  w.u8(static_cast<std::uint8_t>(features.variant));
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& kp = features.keypoints[i];
    w.f32(kp.x);
    w.f32(kp.y);
    w.f32(kp.shape.a);
    w.f32(kp.shape.b);
    w.f32(kp.shape.c);
    for (float v : features.descriptors[i]) w.f32(v);
  }
  return std::move(w.bytes());
}

FeatureSet decode_feature_file(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "feature sidecar");
  r.expect_magic(kMagic);
  if (r.u32() != kVersion) r.fail("unsupported version");
  const std::uint32_t count = r.u32();
  FeatureSet fs;
  fs.roi_width = r.u16();
  fs.roi_height = r.u16();
  const std::uint8_t variant = r.u8();
  if (variant > 1) r.fail("unknown descriptor variant");
  fs.variant = static_cast<DescriptorVariant>(variant);
  constexpr std::size_t kRecord = 4 * (5 + kDescriptorDim);
  if (r.remaining() / kRecord < count) r.fail("truncated");
  fs.keypoints.resize(count);
  fs.descriptors.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto& kp = fs.keypoints[i];
    kp.x = r.f32();
    kp.y = r.f32();
    kp.shape.a = r.f32();
    kp.shape.b = r.f32();
    kp.shape.c = r.f32();
    if (!kp.shape.valid()) r.fail("keypoint with degenerate shape");
    for (float& v : fs.descriptors[i]) v = r.f32();
  }
  return fs;
}

void write_feature_file(const FeatureSet& features, const std::filesystem::path& path) {
  const auto bytes = encode_feature_file(features);
  detail::write_file_atomic(path, bytes);
}

FeatureSet read_feature_file(const std::filesystem::path& path) {
  return decode_feature_file(detail::read_file(path));
}

}  // namespace stripeid
