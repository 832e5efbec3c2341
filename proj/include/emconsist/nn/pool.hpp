#pragma once

#include <vector>

#include "emconsist/nn/tensor.hpp"

namespace emc {

inline constexpr int kPooledExtent = 16;

/// Adaptive-average partition of an axis of size `in` into `out` cells: cell i covers
/// [floor(i*in/out), ceil((i+1)*in/out)). When in < out cells replicate input voxels.
struct AdaptivePartition {
  int start = 0;
  int end = 0;
};

inline std::vector<AdaptivePartition> adaptive_partitions(int in, int out) {
  std::vector<AdaptivePartition> cells(static_cast<std::size_t>(out));
  for (int i = 0; i < out; ++i) {
    cells[static_cast<std::size_t>(i)].start = (i * in) / out;
    cells[static_cast<std::size_t>(i)].end = ((i + 1) * in + out - 1) / out;
  }
  return cells;
}

namespace detail {

template <class T>
Tensor<T> pool_axis(const Tensor<T>& src, int axis, int target) {
  Shape3 out_shape = src.s;
  out_shape[axis] = target;
  Tensor<T> out(src.c, out_shape);
  const auto cells = adaptive_partitions(src.s[axis], target);
  for (int c = 0; c < src.c; ++c)
    for (int z = 0; z < out.s.d; ++z)
      for (int y = 0; y < out.s.h; ++y)
        for (int x = 0; x < out.s.w; ++x) {
          Index3 p{z, y, x};
          const auto& cell = cells[static_cast<std::size_t>(p[axis])];
          T acc = 0;
          for (int k = cell.start; k < cell.end; ++k) {
            p[axis] = k;
            acc += src.at(c, p[0], p[1], p[2]);
          }
          out.at(c, z, y, x) = acc / T(cell.end - cell.start);
        }
  return out;
}

// Transpose of pool_axis: scatters each pooled gradient evenly over its cell.
template <class T>
Tensor<T> unpool_axis(const Tensor<T>& grad, int axis, int extent) {
  Shape3 out_shape = grad.s;
  out_shape[axis] = extent;
  Tensor<T> out(grad.c, out_shape);
  const auto cells = adaptive_partitions(extent, grad.s[axis]);
  for (int c = 0; c < grad.c; ++c)
    for (int z = 0; z < grad.s.d; ++z)
      for (int y = 0; y < grad.s.h; ++y)
        for (int x = 0; x < grad.s.w; ++x) {
          Index3 p{z, y, x};
          const auto& cell = cells[static_cast<std::size_t>(p[axis])];
          const T g = grad.at(c, z, y, x) / T(cell.end - cell.start);
          for (int k = cell.start; k < cell.end; ++k) {
            p[axis] = k;
            out.at(c, p[0], p[1], p[2]) += g;
          }
        }
  return out;
}

}  // namespace detail

/// Adaptive average pooling of one level to extent^3 (separable: W, then H, then D).
template <class T>
Tensor<T> adaptive_pool(const Tensor<T>& level, int extent = kPooledExtent) {
  Tensor<T> t = detail::pool_axis(level, 2, extent);
  t = detail::pool_axis(t, 1, extent);
  return detail::pool_axis(t, 0, extent);
}

/// Gradient of adaptive_pool with respect to its input of shape `level_shape`.
template <class T>
Tensor<T> adaptive_pool_backward(const Tensor<T>& grad_pooled, Shape3 level_shape) {
  Tensor<T> t = detail::unpool_axis(grad_pooled, 0, level_shape.d);
  t = detail::unpool_axis(t, 1, level_shape.h);
  return detail::unpool_axis(t, 2, level_shape.w);
}

template <class T>
std::vector<Tensor<T>> pool_pyramid(const std::vector<Tensor<T>>& levels) {
  std::vector<Tensor<T>> out;
  out.reserve(levels.size());
  for (const auto& l : levels) out.push_back(adaptive_pool(l));
  return out;
}

}  // namespace emc
