#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "emconsist/core/shape.hpp"
#include "emconsist/core/volume.hpp"

namespace emc {

/// Channel-major feature grid (C, D, H, W).
template <class T>
struct Tensor {
  int c = 0;
  Shape3 s;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int channels, Shape3 shape, T fill = T(0))
      : c(channels), s(shape), v(static_cast<std::size_t>(channels) * shape.size(), fill) {}

  std::size_t plane() const noexcept { return s.size(); }
  std::size_t size() const noexcept { return v.size(); }
  bool empty() const noexcept { return v.empty(); }
  T* ch(int k) noexcept { return v.data() + static_cast<std::size_t>(k) * plane(); }
  const T* ch(int k) const noexcept { return v.data() + static_cast<std::size_t>(k) * plane(); }
  T& at(int k, int z, int y, int x) { return v[static_cast<std::size_t>(k) * plane() + s.index(z, y, x)]; }
  T at(int k, int z, int y, int x) const { return v[static_cast<std::size_t>(k) * plane() + s.index(z, y, x)]; }
  void zero() { std::fill(v.begin(), v.end(), T(0)); }
  bool same_shape(const Tensor& o) const noexcept { return c == o.c && s == o.s; }

  Tensor& operator+=(const Tensor& o) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
    return *this;
  }
  bool operator==(const Tensor&) const = default;
};

template <class T>
Tensor<T> to_tensor(const Volume& v) {
  Tensor<T> t(1, v.shape);
  std::transform(v.voxels.begin(), v.voxels.end(), t.v.begin(), [](float x) { return static_cast<T>(x); });
  return t;
}

template <class T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.v.begin(), t.v.end(), [](T x) { return std::isfinite(x); });
}

}  // namespace emc
