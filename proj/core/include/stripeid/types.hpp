#pragma once

#include <compare>
#include <cstdint>
#include <functional>

namespace stripeid {

template <class Tag>
struct StrongId {
  std::uint32_t value = 0;

  constexpr StrongId() = default;
  constexpr explicit StrongId(std::uint32_t v) : value(v) {}

  friend constexpr auto operator<=>(StrongId, StrongId) = default;
};

using ImageId = StrongId<struct ImageIdTag>;
using LabelId = StrongId<struct LabelIdTag>;

/// Axis-aligned pixel rectangle.
struct Roi {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  friend bool operator==(const Roi&, const Roi&) = default;
};

}  // namespace stripeid

template <class Tag>
struct std::hash<stripeid::StrongId<Tag>> {
  std::size_t operator()(stripeid::StrongId<Tag> id) const noexcept {
    return std::hash<std::uint32_t>{}(id.value);
  }
};
