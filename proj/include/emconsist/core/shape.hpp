#pragma once

#include <array>
#include <cstddef>
#include <string>

namespace emc {

/// Spatial extent of a 3D grid in (D, H, W) order; W is the fastest axis.
struct Shape3 {
  int d = 0;
  int h = 0;
  int w = 0;

  constexpr std::size_t size() const noexcept {
    return static_cast<std::size_t>(d) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  constexpr std::size_t index(int z, int y, int x) const noexcept {
    return (static_cast<std::size_t>(z) * h + y) * static_cast<std::size_t>(w) + x;
  }
  constexpr int operator[](int axis) const noexcept { return axis == 0 ? d : (axis == 1 ? h : w); }
  constexpr int& operator[](int axis) noexcept { return axis == 0 ? d : (axis == 1 ? h : w); }
  constexpr bool contains(const Shape3& o) const noexcept { return o.d <= d && o.h <= h && o.w <= w; }
  constexpr bool operator==(const Shape3&) const = default;

  static constexpr Shape3 cube(int n) noexcept { return {n, n, n}; }

  std::string str() const {
    return "(" + std::to_string(d) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

using Index3 = std::array<int, 3>;

}  // namespace emc
