#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "emconsist/core/error.hpp"
#include "emconsist/core/volume.hpp"

namespace emc {

/// Channel a holds the affinity of each voxel to its -1 neighbour along axis a (D, H, W).
/// Voxels at index 0 along an axis have affinity 0 on that axis.
struct AffinityMap {
  Shape3 shape;
  std::vector<float> values;  // 3 x D x H x W

  AffinityMap() = default;
  explicit AffinityMap(Shape3 s, float fill = 0.0f) : shape(s), values(3 * s.size(), fill) {}

  float& at(int axis, std::size_t voxel) { return values[static_cast<std::size_t>(axis) * shape.size() + voxel]; }
  float at(int axis, std::size_t voxel) const { return values[static_cast<std::size_t>(axis) * shape.size() + voxel]; }
  const float* channel(int axis) const { return values.data() + static_cast<std::size_t>(axis) * shape.size(); }
};

inline std::size_t axis_stride(const Shape3& s, int axis) {
  return axis == 0 ? static_cast<std::size_t>(s.h) * s.w : (axis == 1 ? static_cast<std::size_t>(s.w) : 1);
}

/// True when voxel (z, y, x) has a -1 neighbour along `axis`.
inline bool has_lower(const Index3& p, int axis) { return p[static_cast<std::size_t>(axis)] > 0; }

inline AffinityMap labels_to_affinities(const LabelVolume& labels) {
  const Shape3 s = labels.shape;
  AffinityMap aff(s);
  for (int a = 0; a < 3; ++a) {
    const std::size_t stride = axis_stride(s, a);
    for (int z = 0; z < s.d; ++z)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          const Index3 p{z, y, x};
          if (!has_lower(p, a)) continue;
          const std::size_t i = s.index(z, y, x);
          const std::uint32_t l = labels.voxels[i];
          aff.at(a, i) = (l != 0 && l == labels.voxels[i - stride]) ? 1.0f : 0.0f;
        }
  }
  return aff;
}

/// Mask of affinity entries that have a partner voxel (1) or sit on a lower border (0).
inline std::vector<float> affinity_valid_mask(const Shape3& s) {
  std::vector<float> m(3 * s.size(), 0.0f);
  for (int a = 0; a < 3; ++a)
    for (int z = 0; z < s.d; ++z)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
          if (has_lower({z, y, x}, a)) m[static_cast<std::size_t>(a) * s.size() + s.index(z, y, x)] = 1.0f;
  return m;
}

}  // namespace emc
