#pragma once

#include <cstddef>
#include <vector>

#include "emconsist/core/error.hpp"
#include "emconsist/nn/tensor.hpp"

namespace emc {

/// (1/2B) sum_i [mse(recon_w_i, x_i) + mse(recon_s_i, x_i)], per-voxel mean squared error.
template <class T>
double recon_loss(const std::vector<Tensor<T>>& recon_w, const std::vector<Tensor<T>>& recon_s,
                  const std::vector<Tensor<T>>& x) {
  require(!x.empty() && recon_w.size() == x.size() && recon_s.size() == x.size(), ErrorKind::validation,
          "reconstruction batches must have equal, non-zero size");
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(recon_w[i].same_shape(x[i]) && recon_s[i].same_shape(x[i]), ErrorKind::validation,
            "reconstruction shape mismatch at batch element " + std::to_string(i));
    double sw = 0.0, ss = 0.0;
    for (std::size_t k = 0; k < x[i].v.size(); ++k) {
      const double dw = static_cast<double>(recon_w[i].v[k]) - x[i].v[k];
      const double ds = static_cast<double>(recon_s[i].v[k]) - x[i].v[k];
      sw += dw * dw;
      ss += ds * ds;
    }
    const double n = static_cast<double>(x[i].v.size());
    total += sw / n + ss / n;
  }
  return total / (2.0 * static_cast<double>(x.size()));
}

/// Accumulates scale * dL/drecon into grad_w / grad_s (resized on first use).
template <class T>
void recon_loss_backward(const std::vector<Tensor<T>>& recon_w, const std::vector<Tensor<T>>& recon_s,
                         const std::vector<Tensor<T>>& x, double scale, std::vector<Tensor<T>>& grad_w,
                         std::vector<Tensor<T>>& grad_s) {
  grad_w.resize(x.size());
  grad_s.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (grad_w[i].empty()) grad_w[i] = Tensor<T>(x[i].c, x[i].s);
    if (grad_s[i].empty()) grad_s[i] = Tensor<T>(x[i].c, x[i].s);
    const T f = static_cast<T>(scale / (static_cast<double>(x.size()) * static_cast<double>(x[i].v.size())));
    for (std::size_t k = 0; k < x[i].v.size(); ++k) {
      grad_w[i].v[k] += f * (recon_w[i].v[k] - x[i].v[k]);
      grad_s[i].v[k] += f * (recon_s[i].v[k] - x[i].v[k]);
    }
  }
}

}  // namespace emc
