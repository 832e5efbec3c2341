#pragma once

#include <cstddef>
#include <string>

#include "emconsist/nn/kernels.hpp"
#include "emconsist/nn/params.hpp"

namespace emc {

/// Dense layer over row vectors, weight stored [in][out].
struct Linear {
  int in = 0, out = 0;
  std::size_t w = 0, b = 0;

  static Linear add(ParamLayout& L, const std::string& name, int in, int out, Init init = Init::fan_in_normal) {
    Linear l;
    l.in = in;
    l.out = out;
    l.w = L.add(name + ".w", {in, out}, init, in);
    l.b = L.add(name + ".b", {out}, Init::zeros);
    return l;
  }
  static Linear bind(const ParamLayout& L, const std::string& name) {
    const auto& e = L.at(name + ".w");
    Linear l;
    l.in = e.shape[0];
    l.out = e.shape[1];
    l.w = e.offset;
    l.b = L.offset(name + ".b");
    return l;
  }

  /// Y[rows x out] = X[rows x in] W + b
  template <class T>
  void forward(const T* prm, const T* X, int rows, T* Y) const {
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < out; ++j) Y[static_cast<std::size_t>(r) * out + j] = prm[b + j];
    kernels::matmul_acc(X, prm + w, Y, rows, in, out);
  }

  /// Accumulates parameter gradients into gp and, when dX is non-null, the input gradient.
  template <class T>
  void backward(const T* prm, const T* X, int rows, const T* dY, T* gp, T* dX) const {
    kernels::matmul_tn_acc(X, dY, gp + w, in, rows, out);
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < out; ++j) gp[b + j] += dY[static_cast<std::size_t>(r) * out + j];
    if (dX) kernels::matmul_nt_acc(dY, prm + w, dX, rows, out, in);
  }
};

}  // namespace emc
