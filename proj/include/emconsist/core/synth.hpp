#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <vector>

#include "emconsist/core/error.hpp"
#include "emconsist/core/rng.hpp"
#include "emconsist/core/volume.hpp"

namespace emc {

/// Parameters of the synthetic EM-like generator.
struct SynthSpec {
  Shape3 shape = Shape3::cube(48);
  int min_instances = 5;
  int max_instances = 10;
  double tube_fraction = 0.4;     // probability that an instance is a curved tube
  double noise_amplitude = 0.08;  // std-dev of the band-limited additive noise
  int boundary_width = 1;         // darkened membrane shell thickness, voxels
  std::uint64_t seed = 0;

  void validate() const {
    require(shape.d >= 8 && shape.h >= 8 && shape.w >= 8, ErrorKind::validation,
            "synth shape " + shape.str() + " must be at least 8 along every axis");
    require(min_instances >= 0 && max_instances >= min_instances, ErrorKind::validation,
            "instance count range [" + std::to_string(min_instances) + ", " + std::to_string(max_instances) +
                "] is invalid");
    require(max_instances <= 1000, ErrorKind::validation, "at most 1000 instances are supported");
    require(tube_fraction >= 0.0 && tube_fraction <= 1.0, ErrorKind::validation, "tube_fraction must be in [0,1]");
    require(noise_amplitude >= 0.0 && std::isfinite(noise_amplitude), ErrorKind::validation,
            "noise_amplitude must be finite and non-negative");
    require(boundary_width >= 1 && boundary_width <= 3, ErrorKind::validation, "boundary_width must be in [1,3]");
  }
};

struct SynthSample {
  Volume volume;
  LabelVolume labels;
};

namespace detail {

inline constexpr std::array<Index3, 6> kFaceOffsets{{{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}}};

inline bool in_bounds(const Shape3& s, int z, int y, int x) {
  return z >= 0 && y >= 0 && x >= 0 && z < s.d && y < s.h && x < s.w;
}

using Vec3 = std::array<double, 3>;

// Uniformly random rotation as a row-major 3x3 matrix.
inline std::array<double, 9> random_rotation(Rng& rng) {
  double q[4];
  double n = 0.0;
  do {
    n = 0.0;
    for (double& c : q) {
      c = normal(rng);
      n += c * c;
    }
  } while (n < 1e-12);
  n = std::sqrt(n);
  for (double& c : q) c /= n;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {1 - 2 * (y * y + z * z), 2 * (x * y - z * w),     2 * (x * z + y * w),
          2 * (x * y + z * w),     1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
          2 * (x * z - y * w),     2 * (y * z + x * w),     1 - 2 * (x * x + y * y)};
}

inline std::vector<std::size_t> rasterize_ellipsoid(const Shape3& s, Rng& rng, double scale) {
  const double min_dim = std::min({s.d, s.h, s.w});
  const double r_min = 2.5;
  const double r_max = std::max(r_min, min_dim / 5.0);
  Vec3 c{uniform(rng, 0.0, s.d - 1.0), uniform(rng, 0.0, s.h - 1.0), uniform(rng, 0.0, s.w - 1.0)};
  Vec3 r;
  for (double& ri : r) ri = std::max(r_min, uniform(rng, r_min, r_max) * scale);
  const auto rot = random_rotation(rng);
  const double reach = std::max({r[0], r[1], r[2]});
  std::vector<std::size_t> out;
  const int z0 = std::max(0, static_cast<int>(std::floor(c[0] - reach)));
  const int z1 = std::min(s.d - 1, static_cast<int>(std::ceil(c[0] + reach)));
  const int y0 = std::max(0, static_cast<int>(std::floor(c[1] - reach)));
  const int y1 = std::min(s.h - 1, static_cast<int>(std::ceil(c[1] + reach)));
  const int x0 = std::max(0, static_cast<int>(std::floor(c[2] - reach)));
  const int x1 = std::min(s.w - 1, static_cast<int>(std::ceil(c[2] + reach)));
  for (int z = z0; z <= z1; ++z)
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double p[3] = {z - c[0], y - c[1], x - c[2]};
        double acc = 0.0;
        for (int i = 0; i < 3; ++i) {
          // Local coordinate along the ellipsoid's i-th axis (column i of rot).
          const double li = rot[0 * 3 + i] * p[0] + rot[1 * 3 + i] * p[1] + rot[2 * 3 + i] * p[2];
          acc += (li / r[i]) * (li / r[i]);
        }
        if (acc <= 1.0) out.push_back(s.index(z, y, x));
      }
  return out;
}

inline std::vector<std::size_t> rasterize_tube(const Shape3& s, Rng& rng, double scale) {
  const double radius = std::max(1.6, uniform(rng, 1.8, 3.2) * scale);
  auto point = [&] {
    return Vec3{uniform(rng, radius, s.d - 1.0 - radius), uniform(rng, radius, s.h - 1.0 - radius),
                uniform(rng, radius, s.w - 1.0 - radius)};
  };
  const Vec3 p0 = point(), p1 = point(), p2 = point();
  double length = 0.0;
  for (int i = 0; i < 3; ++i) length += std::abs(p2[i] - p0[i]) + 2 * std::abs(p1[i] - p0[i]);
  const int samples = std::max(8, static_cast<int>(std::ceil(length * 2.0)));
  std::vector<unsigned char> mark(s.size(), 0);
  std::vector<std::size_t> out;
  const int reach = static_cast<int>(std::ceil(radius));
  for (int k = 0; k <= samples; ++k) {
    const double t = static_cast<double>(k) / samples;
    Vec3 c;
    for (int i = 0; i < 3; ++i) c[i] = (1 - t) * (1 - t) * p0[i] + 2 * (1 - t) * t * p1[i] + t * t * p2[i];
    const int cz = static_cast<int>(std::lround(c[0])), cy = static_cast<int>(std::lround(c[1])),
              cx = static_cast<int>(std::lround(c[2]));
    for (int z = cz - reach; z <= cz + reach; ++z)
      for (int y = cy - reach; y <= cy + reach; ++y)
        for (int x = cx - reach; x <= cx + reach; ++x) {
          if (!in_bounds(s, z, y, x)) continue;
          const double dz = z - c[0], dy = y - c[1], dx = x - c[2];
          if (dz * dz + dy * dy + dx * dx > radius * radius) continue;
          const std::size_t idx = s.index(z, y, x);
          if (!mark[idx]) {
            mark[idx] = 1;
            out.push_back(idx);
          }
        }
  }
  return out;
}

// Keep only the largest 6-connected component of every label.
inline void keep_largest_components(LabelVolume& labels) {
  const Shape3& s = labels.shape;
  std::vector<int> comp(s.size(), -1);
  std::vector<std::size_t> comp_size;
  std::vector<std::uint32_t> comp_label;
  std::deque<std::size_t> queue;
  for (std::size_t start = 0; start < s.size(); ++start) {
    if (labels.voxels[start] == 0 || comp[start] >= 0) continue;
    const int id = static_cast<int>(comp_size.size());
    const std::uint32_t lab = labels.voxels[start];
    comp_size.push_back(0);
    comp_label.push_back(lab);
    comp[start] = id;
    queue.push_back(start);
    while (!queue.empty()) {
      const std::size_t cur = queue.front();
      queue.pop_front();
      ++comp_size[id];
      const int z = static_cast<int>(cur / (static_cast<std::size_t>(s.h) * s.w));
      const int y = static_cast<int>((cur / s.w) % s.h);
      const int x = static_cast<int>(cur % s.w);
      for (const auto& o : kFaceOffsets) {
        const int nz = z + o[0], ny = y + o[1], nx = x + o[2];
        if (!in_bounds(s, nz, ny, nx)) continue;
        const std::size_t n = s.index(nz, ny, nx);
        if (comp[n] < 0 && labels.voxels[n] == lab) {
          comp[n] = id;
          queue.push_back(n);
        }
      }
    }
  }
  std::vector<int> best;
  for (std::size_t c = 0; c < comp_size.size(); ++c) {
    const std::uint32_t lab = comp_label[c];
    if (best.size() <= lab) best.resize(lab + 1, -1);
    if (best[lab] < 0 || comp_size[c] > comp_size[static_cast<std::size_t>(best[lab])]) best[lab] = static_cast<int>(c);
  }
  for (std::size_t i = 0; i < s.size(); ++i)
    if (labels.voxels[i] != 0 && best[labels.voxels[i]] != comp[i]) labels.voxels[i] = 0;
}

// Separable [1,2,1]/4 smoothing with reflected borders.
inline void smooth_axis(std::vector<double>& f, const Shape3& s, int axis) {
  std::vector<double> src = f;
  const int n = s[axis];
  const std::size_t stride = axis == 0 ? static_cast<std::size_t>(s.h) * s.w : (axis == 1 ? s.w : 1);
  for (int z = 0; z < s.d; ++z)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        const int pos = axis == 0 ? z : (axis == 1 ? y : x);
        const std::size_t i = s.index(z, y, x);
        const std::size_t lo = pos > 0 ? i - stride : i + (n > 1 ? stride : 0);
        const std::size_t hi = pos < n - 1 ? i + stride : i - (n > 1 ? stride : 0);
        f[i] = 0.25 * src[lo] + 0.5 * src[i] + 0.25 * src[hi];
      }
}

}  // namespace detail

/// Textured intensity volume with membrane-darkened instances, plus matching labels.
/// Deterministic in (spec, spec.seed).
inline SynthSample synth_volume(const SynthSpec& spec) {
  spec.validate();
  const Shape3 s = spec.shape;
  Rng rng = make_stream({spec.seed, 0x53594e54ull});
  SynthSample out{Volume(s), LabelVolume(s)};
  LabelVolume& labels = out.labels;

  const int count = uniform_int(rng, spec.min_instances, spec.max_instances);
  constexpr int kAttempts = 400;
  constexpr std::size_t kMinVoxels = 20;
  for (int id = 1; id <= count; ++id) {
    bool placed = false;
    for (int attempt = 0; attempt < kAttempts && !placed; ++attempt) {
      const double scale = std::max(0.3, 1.0 - attempt / 200.0);
      const bool tube = bernoulli(rng, spec.tube_fraction);
      std::vector<std::size_t> cells =
          tube ? detail::rasterize_tube(s, rng, scale) : detail::rasterize_ellipsoid(s, rng, scale);
      if (cells.size() < kMinVoxels) continue;
      bool free = true;
      for (std::size_t c : cells)
        if (labels.voxels[c] != 0) {
          free = false;
          break;
        }
      if (!free) continue;
      for (std::size_t c : cells) labels.voxels[c] = static_cast<std::uint32_t>(id);
      placed = true;
    }
    if (!placed) {
      fail(ErrorKind::validation, "could not place " + std::to_string(count) + " non-overlapping instances in " +
                                      s.str());
    }
  }
  detail::keep_largest_components(labels);

  // Membrane shell: instance voxels within boundary_width (6-connected steps) of a label change.
  std::vector<int> depth(s.size(), 0);
  for (int z = 0; z < s.d; ++z)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        const std::size_t i = s.index(z, y, x);
        if (labels.voxels[i] == 0) continue;
        for (const auto& o : detail::kFaceOffsets) {
          const int nz = z + o[0], ny = y + o[1], nx = x + o[2];
          if (detail::in_bounds(s, nz, ny, nx) && labels.voxels[s.index(nz, ny, nx)] != labels.voxels[i]) {
            depth[i] = 1;
            break;
          }
        }
      }
  for (int level = 2; level <= spec.boundary_width; ++level) {
    std::vector<int> next = depth;
    for (int z = 0; z < s.d; ++z)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          const std::size_t i = s.index(z, y, x);
          if (labels.voxels[i] == 0 || depth[i] != 0) continue;
          for (const auto& o : detail::kFaceOffsets) {
            const int nz = z + o[0], ny = y + o[1], nx = x + o[2];
            if (!detail::in_bounds(s, nz, ny, nx)) continue;
            const std::size_t n = s.index(nz, ny, nx);
            if (depth[n] == level - 1 && labels.voxels[n] == labels.voxels[i]) {
              next[i] = level;
              break;
            }
          }
        }
    depth = std::move(next);
  }

  std::vector<double> brightness(static_cast<std::size_t>(count) + 1, 0.3);
  for (int id = 1; id <= count; ++id) brightness[static_cast<std::size_t>(id)] = uniform(rng, 0.55, 0.85);

  std::vector<double> noise(s.size());
  for (double& n : noise) n = normal(rng);
  for (int pass = 0; pass < 2; ++pass)
    for (int axis = 0; axis < 3; ++axis) detail::smooth_axis(noise, s, axis);
  double var = 0.0;
  for (double n : noise) var += n * n;
  const double inv_std = var > 0.0 ? 1.0 / std::sqrt(var / static_cast<double>(noise.size())) : 0.0;

  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::uint32_t lab = labels.voxels[i];
    double v = depth[i] > 0 ? 0.08 : brightness[lab];
    v += spec.noise_amplitude * noise[i] * inv_std;
    out.volume.voxels[i] = static_cast<float>(v);
  }
  normalize(out.volume);
  return out;
}

}  // namespace emc
