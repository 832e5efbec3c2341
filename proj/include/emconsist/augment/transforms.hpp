#pragma once

// Primitive volume transforms shared by the weak and strong pipelines. Every
// transform is a pure function of (input, parameters) so a recorded parameter
// list replays bit-exactly.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "emconsist/core/error.hpp"
#include "emconsist/core/rng.hpp"
#include "emconsist/core/volume.hpp"

namespace emc::xform {

/// Mirror a real coordinate into [0, n-1] (reflection about the edge voxel centers).
inline double reflect(double x, int n) {
  if (n <= 1) return 0.0;
  const double period = 2.0 * (n - 1);
  x = std::fmod(std::abs(x), period);
  return x > n - 1 ? period - x : x;
}

inline int reflect_index(int i, int n) {
  if (n <= 1) return 0;
  const int period = 2 * (n - 1);
  i = std::abs(i) % period;
  return i > n - 1 ? period - i : i;
}

inline float sample_nearest(const Volume& v, double z, double y, double x) {
  const int iz = reflect_index(static_cast<int>(std::lround(z)), v.shape.d);
  const int iy = reflect_index(static_cast<int>(std::lround(y)), v.shape.h);
  const int ix = reflect_index(static_cast<int>(std::lround(x)), v.shape.w);
  return v.at(iz, iy, ix);
}

inline float sample_linear(const Volume& v, double z, double y, double x) {
  z = reflect(z, v.shape.d);
  y = reflect(y, v.shape.h);
  x = reflect(x, v.shape.w);
  const int z0 = static_cast<int>(std::floor(z)), y0 = static_cast<int>(std::floor(y)),
            x0 = static_cast<int>(std::floor(x));
  const int z1 = std::min(z0 + 1, v.shape.d - 1), y1 = std::min(y0 + 1, v.shape.h - 1),
            x1 = std::min(x0 + 1, v.shape.w - 1);
  const double fz = z - z0, fy = y - y0, fx = x - x0;
  auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
  const double c00 = lerp(v.at(z0, y0, x0), v.at(z0, y0, x1), fx);
  const double c01 = lerp(v.at(z0, y1, x0), v.at(z0, y1, x1), fx);
  const double c10 = lerp(v.at(z1, y0, x0), v.at(z1, y0, x1), fx);
  const double c11 = lerp(v.at(z1, y1, x0), v.at(z1, y1, x1), fx);
  const double r = lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz);
  return static_cast<float>(r);
}

/// out(p) = in(p - shift), reflect-padded.
inline Volume translate(const Volume& in, Index3 shift) {
  Volume out(in.shape);
  out.voxel_size = in.voxel_size;
  for (int z = 0; z < in.shape.d; ++z)
    for (int y = 0; y < in.shape.h; ++y)
      for (int x = 0; x < in.shape.w; ++x)
        out.at(z, y, x) = in.at(reflect_index(z - shift[0], in.shape.d), reflect_index(y - shift[1], in.shape.h),
                                reflect_index(x - shift[2], in.shape.w));
  return out;
}

/// Reverse the order of voxels along one axis.
inline Volume flip(const Volume& in, int axis) {
  Volume out(in.shape);
  out.voxel_size = in.voxel_size;
  const int n = in.shape[axis];
  for (int z = 0; z < in.shape.d; ++z)
    for (int y = 0; y < in.shape.h; ++y)
      for (int x = 0; x < in.shape.w; ++x) {
        Index3 src{z, y, x};
        src[axis] = n - 1 - src[axis];
        out.at(z, y, x) = in.at(src[0], src[1], src[2]);
      }
  return out;
}

/// k quarter turns in the plane orthogonal to `axis`. With (u, v) the plane axes in
/// increasing order, one turn maps out(u, v) = in(v, n-1-u). The plane must be square.
inline Volume rotate90(const Volume& in, int axis, int k) {
  const int u_axis = axis == 0 ? 1 : 0;
  const int v_axis = axis == 2 ? 1 : 2;
  require(in.shape[u_axis] == in.shape[v_axis], ErrorKind::validation,
          "rotation about axis " + std::to_string(axis) + " needs a square plane, got " + in.shape.str());
  k = ((k % 4) + 4) % 4;
  Volume cur = in;
  const int n = in.shape[u_axis];
  for (int t = 0; t < k; ++t) {
    Volume out(in.shape);
    out.voxel_size = in.voxel_size;
    for (int z = 0; z < in.shape.d; ++z)
      for (int y = 0; y < in.shape.h; ++y)
        for (int x = 0; x < in.shape.w; ++x) {
          Index3 p{z, y, x};
          Index3 src = p;
          src[u_axis] = p[v_axis];
          src[v_axis] = n - 1 - p[u_axis];
          out.at(z, y, x) = cur.at(src[0], src[1], src[2]);
        }
    cur = std::move(out);
  }
  return cur;
}

/// Isotropic zoom about the volume centre; factor > 1 magnifies.
inline Volume zoom(const Volume& in, double factor, bool linear) {
  Volume out(in.shape);
  out.voxel_size = in.voxel_size;
  const double cz = (in.shape.d - 1) / 2.0, cy = (in.shape.h - 1) / 2.0, cx = (in.shape.w - 1) / 2.0;
  for (int z = 0; z < in.shape.d; ++z)
    for (int y = 0; y < in.shape.h; ++y)
      for (int x = 0; x < in.shape.w; ++x) {
        const double sz = cz + (z - cz) / factor, sy = cy + (y - cy) / factor, sx = cx + (x - cx) / factor;
        out.at(z, y, x) = linear ? sample_linear(in, sz, sy, sx) : sample_nearest(in, sz, sy, sx);
      }
  return out;
}

/// Number of control points along an axis of extent n for a given spacing.
inline int control_points(int n, int spacing) { return (n - 1 + spacing - 1) / spacing + 1; }

/// Elastic warp: control-grid displacements (3 components, D-major grid) are trilinearly
/// upsampled to a dense field and the input is resampled at p + u(p).
inline Volume elastic(const Volume& in, int spacing, const std::vector<double>& displacements) {
  const Shape3 grid{control_points(in.shape.d, spacing), control_points(in.shape.h, spacing),
                    control_points(in.shape.w, spacing)};
  require(displacements.size() == 3 * grid.size(), ErrorKind::validation, "elastic displacement grid size mismatch");
  Volume out(in.shape);
  out.voxel_size = in.voxel_size;
  auto ctrl = [&](int c, int gz, int gy, int gx) { return displacements[c * grid.size() + grid.index(gz, gy, gx)]; };
  for (int z = 0; z < in.shape.d; ++z) {
    const double tz = static_cast<double>(z) / spacing;
    const int gz0 = std::min(static_cast<int>(tz), grid.d - 1), gz1 = std::min(gz0 + 1, grid.d - 1);
    const double fz = tz - gz0;
    for (int y = 0; y < in.shape.h; ++y) {
      const double ty = static_cast<double>(y) / spacing;
      const int gy0 = std::min(static_cast<int>(ty), grid.h - 1), gy1 = std::min(gy0 + 1, grid.h - 1);
      const double fy = ty - gy0;
      for (int x = 0; x < in.shape.w; ++x) {
        const double tx = static_cast<double>(x) / spacing;
        const int gx0 = std::min(static_cast<int>(tx), grid.w - 1), gx1 = std::min(gx0 + 1, grid.w - 1);
        const double fx = tx - gx0;
        double u[3];
        for (int c = 0; c < 3; ++c) {
          const double c00 = ctrl(c, gz0, gy0, gx0) * (1 - fx) + ctrl(c, gz0, gy0, gx1) * fx;
          const double c01 = ctrl(c, gz0, gy1, gx0) * (1 - fx) + ctrl(c, gz0, gy1, gx1) * fx;
          const double c10 = ctrl(c, gz1, gy0, gx0) * (1 - fx) + ctrl(c, gz1, gy0, gx1) * fx;
          const double c11 = ctrl(c, gz1, gy1, gx0) * (1 - fx) + ctrl(c, gz1, gy1, gx1) * fx;
          u[c] = (c00 * (1 - fy) + c01 * fy) * (1 - fz) + (c10 * (1 - fy) + c11 * fy) * fz;
        }
        out.at(z, y, x) = sample_linear(in, z + u[0], y + u[1], x + u[2]);
      }
    }
  }
  return out;
}

/// Crop the box [origin, origin+extent) and stretch it back to the full shape (trilinear).
inline Volume crop_resize(const Volume& in, Index3 origin, Shape3 extent) {
  Volume out(in.shape);
  out.voxel_size = in.voxel_size;
  auto map = [](int p, int n, int o, int e) {
    return n > 1 ? o + static_cast<double>(p) * (e - 1) / (n - 1) : static_cast<double>(o);
  };
  for (int z = 0; z < in.shape.d; ++z)
    for (int y = 0; y < in.shape.h; ++y)
      for (int x = 0; x < in.shape.w; ++x)
        out.at(z, y, x) = sample_linear(in, map(z, in.shape.d, origin[0], extent.d),
                                        map(y, in.shape.h, origin[1], extent.h),
                                        map(x, in.shape.w, origin[2], extent.w));
  return out;
}

inline Volume gamma(const Volume& in, double g) {
  Volume out = in;
  for (float& v : out.voxels) v = static_cast<float>(std::pow(static_cast<double>(v), g));
  return out;
}

/// Additive Gaussian noise from a dedicated stream, clamped to [0, 1].
inline Volume gaussian_noise(const Volume& in, double sigma, std::uint64_t seed) {
  Volume out = in;
  Rng rng = make_stream({seed, 0x4e4f495345ull});
  std::normal_distribution<double> dist(0.0, sigma);
  for (float& v : out.voxels) v = static_cast<float>(std::clamp(static_cast<double>(v) + dist(rng), 0.0, 1.0));
  return out;
}

/// Copy the block at src (as it was before the copy) over the block at dst.
inline Volume splice(const Volume& in, Index3 src, Index3 dst, Shape3 size) {
  Volume out = in;
  for (int z = 0; z < size.d; ++z)
    for (int y = 0; y < size.h; ++y)
      for (int x = 0; x < size.w; ++x)
        out.at(dst[0] + z, dst[1] + y, dst[2] + x) = in.at(src[0] + z, src[1] + y, src[2] + x);
  return out;
}

/// Zero cubic blocks (clipped at the border) at the given origins.
inline Volume mask_blocks(const Volume& in, int block, const std::vector<Index3>& origins) {
  Volume out = in;
  for (const auto& o : origins)
    for (int z = o[0]; z < std::min(o[0] + block, in.shape.d); ++z)
      for (int y = o[1]; y < std::min(o[1] + block, in.shape.h); ++y)
        for (int x = o[2]; x < std::min(o[2] + block, in.shape.w); ++x) out.at(z, y, x) = 0.0f;
  return out;
}

}  // namespace emc::xform
