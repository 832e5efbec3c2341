#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "emconsist/core/error.hpp"
#include "emconsist/core/shape.hpp"

namespace emc {

using VoxelSize = std::array<double, 3>;

/// Scalar intensity grid stored as float32 in D-major order.
struct Volume {
  Shape3 shape;
  std::vector<float> voxels;
  VoxelSize voxel_size{1.0, 1.0, 1.0};

  Volume() = default;
  explicit Volume(Shape3 s, float fill = 0.0f) : shape(s), voxels(s.size(), fill) {}

  float& at(int z, int y, int x) { return voxels[shape.index(z, y, x)]; }
  float at(int z, int y, int x) const { return voxels[shape.index(z, y, x)]; }
  bool operator==(const Volume&) const = default;
};

/// Instance-ID grid; 0 is background.
struct LabelVolume {
  Shape3 shape;
  std::vector<std::uint32_t> voxels;
  VoxelSize voxel_size{1.0, 1.0, 1.0};

  LabelVolume() = default;
  explicit LabelVolume(Shape3 s, std::uint32_t fill = 0) : shape(s), voxels(s.size(), fill) {}

  std::uint32_t& at(int z, int y, int x) { return voxels[shape.index(z, y, x)]; }
  std::uint32_t at(int z, int y, int x) const { return voxels[shape.index(z, y, x)]; }
  bool operator==(const LabelVolume&) const = default;
};

/// Min-max rescale to [0, 1]; constant volumes become all zeros.
inline void normalize(Volume& v) {
  if (v.voxels.empty()) return;
  auto [lo_it, hi_it] = std::minmax_element(v.voxels.begin(), v.voxels.end());
  const float lo = *lo_it;
  const float hi = *hi_it;
  if (!(hi > lo)) {
    std::fill(v.voxels.begin(), v.voxels.end(), 0.0f);
    return;
  }
  const double scale = 1.0 / (static_cast<double>(hi) - lo);
  for (float& x : v.voxels) x = std::clamp(static_cast<float>((x - static_cast<double>(lo)) * scale), 0.0f, 1.0f);
}

inline bool all_finite(const Volume& v) {
  return std::all_of(v.voxels.begin(), v.voxels.end(), [](float x) { return std::isfinite(x); });
}

inline Volume crop(const Volume& v, Index3 origin, Shape3 extent) {
  require(origin[0] >= 0 && origin[1] >= 0 && origin[2] >= 0 && origin[0] + extent.d <= v.shape.d &&
              origin[1] + extent.h <= v.shape.h && origin[2] + extent.w <= v.shape.w,
          ErrorKind::validation, "crop " + extent.str() + " exceeds volume " + v.shape.str());
  Volume out(extent);
  out.voxel_size = v.voxel_size;
  for (int z = 0; z < extent.d; ++z)
    for (int y = 0; y < extent.h; ++y) {
      const float* src = &v.voxels[v.shape.index(origin[0] + z, origin[1] + y, origin[2])];
      std::copy(src, src + extent.w, &out.voxels[extent.index(z, y, 0)]);
    }
  return out;
}

inline LabelVolume crop(const LabelVolume& v, Index3 origin, Shape3 extent) {
  require(v.shape.contains(extent), ErrorKind::validation, "crop exceeds label volume");
  LabelVolume out(extent);
  out.voxel_size = v.voxel_size;
  for (int z = 0; z < extent.d; ++z)
    for (int y = 0; y < extent.h; ++y) {
      const auto* src = &v.voxels[v.shape.index(origin[0] + z, origin[1] + y, origin[2])];
      std::copy(src, src + extent.w, &out.voxels[extent.index(z, y, 0)]);
    }
  return out;
}

}  // namespace emc
