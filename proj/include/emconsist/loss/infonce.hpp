#pragma once

// InfoNCE over attended tokens. For sample b and level i the positive logit is
// m_hat[b][i] . n_hat[b][i] / tau and the negatives are n_hat[b][k], k != i (optionally
// also every level of every other sample). m and n are L2-normalized first.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "emconsist/core/error.hpp"

namespace emc {

namespace detail {

inline constexpr double kNormFloor = 1e-12;

template <class T>
std::vector<T> normalize_rows(const std::vector<T>& x, int rows, int d, std::vector<T>& norms) {
  std::vector<T> out(x.size());
  norms.assign(static_cast<std::size_t>(rows), T(0));
  for (int r = 0; r < rows; ++r) {
    T s = 0;
    for (int i = 0; i < d; ++i) s += x[static_cast<std::size_t>(r) * d + i] * x[static_cast<std::size_t>(r) * d + i];
    const T nrm = std::max(std::sqrt(s), static_cast<T>(kNormFloor));
    norms[static_cast<std::size_t>(r)] = nrm;
    for (int i = 0; i < d; ++i) out[static_cast<std::size_t>(r) * d + i] = x[static_cast<std::size_t>(r) * d + i] / nrm;
  }
  return out;
}

/// dx += (dxh - xh (xh . dxh)) / |x|
template <class T>
void normalize_rows_backward(const std::vector<T>& xh, const std::vector<T>& norms, const std::vector<T>& dxh,
                             int rows, int d, std::vector<T>& dx) {
  for (int r = 0; r < rows; ++r) {
    T dot = 0;
    for (int i = 0; i < d; ++i) dot += xh[static_cast<std::size_t>(r) * d + i] * dxh[static_cast<std::size_t>(r) * d + i];
    for (int i = 0; i < d; ++i) {
      const std::size_t k = static_cast<std::size_t>(r) * d + i;
      dx[k] += (dxh[k] - xh[k] * dot) / norms[static_cast<std::size_t>(r)];
    }
  }
}

}  // namespace detail

/// ms[b], ns[b] are N x d. Returns the mean loss; when dms/dns are non-null they receive
/// scale * dL/dm and scale * dL/dn (accumulated).
template <class T>
double infonce_loss(const std::vector<std::vector<T>>& ms, const std::vector<std::vector<T>>& ns, int d, double tau,
                    bool cross_batch, double scale = 1.0, std::vector<std::vector<T>>* dms = nullptr,
                    std::vector<std::vector<T>>* dns = nullptr) {
  require(tau > 0.0 && std::isfinite(tau), ErrorKind::validation, "temperature must be positive");
  require(!ms.empty() && ms.size() == ns.size(), ErrorKind::validation, "token batches must match");
  const int B = static_cast<int>(ms.size());
  const int N = static_cast<int>(ms[0].size() / static_cast<std::size_t>(d));
  std::vector<std::vector<T>> mh(B), nh(B), mnorm(B), nnorm(B);
  for (int b = 0; b < B; ++b) {
    mh[b] = detail::normalize_rows(ms[b], N, d, mnorm[b]);
    nh[b] = detail::normalize_rows(ns[b], N, d, nnorm[b]);
  }
  const bool grad = dms && dns;
  std::vector<std::vector<T>> dmh, dnh;
  if (grad) {
    dmh.assign(B, std::vector<T>(ms[0].size(), T(0)));
    dnh.assign(B, std::vector<T>(ms[0].size(), T(0)));
  }
  const double inv_count = 1.0 / (static_cast<double>(B) * N);
  double total = 0.0;
  std::vector<double> logits;
  std::vector<std::pair<int, int>> cand;
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < N; ++i) {
      cand.clear();
      for (int bb = 0; bb < B; ++bb) {
        if (!cross_batch && bb != b) continue;
        for (int k = 0; k < N; ++k) cand.emplace_back(bb, k);
      }
      logits.assign(cand.size(), 0.0);
      std::size_t pos = 0;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < cand.size(); ++c) {
        const auto [bb, k] = cand[c];
        double dot = 0.0;
        for (int e = 0; e < d; ++e)
          dot += static_cast<double>(mh[b][static_cast<std::size_t>(i) * d + e]) * nh[bb][static_cast<std::size_t>(k) * d + e];
        logits[c] = dot / tau;
        if (bb == b && k == i) pos = c;
        mx = std::max(mx, logits[c]);
      }
      double sum = 0.0;
      for (double l : logits) sum += std::exp(l - mx);
      const double lse = mx + std::log(sum);
      total += lse - logits[pos];
      if (!grad) continue;
      for (std::size_t c = 0; c < cand.size(); ++c) {
        const auto [bb, k] = cand[c];
        const double p = std::exp(logits[c] - lse);
        const double dl = (p - (c == pos ? 1.0 : 0.0)) * inv_count * scale / tau;
        for (int e = 0; e < d; ++e) {
          const std::size_t mi = static_cast<std::size_t>(i) * d + e, ni = static_cast<std::size_t>(k) * d + e;
          dmh[b][mi] += static_cast<T>(dl * nh[bb][ni]);
          dnh[bb][ni] += static_cast<T>(dl * mh[b][mi]);
        }
      }
    }
  if (grad) {
    dms->resize(B);
    dns->resize(B);
    for (int b = 0; b < B; ++b) {
      (*dms)[b].resize(ms[b].size(), T(0));
      (*dns)[b].resize(ns[b].size(), T(0));
      detail::normalize_rows_backward(mh[b], mnorm[b], dmh[b], N, d, (*dms)[b]);
      detail::normalize_rows_backward(nh[b], nnorm[b], dnh[b], N, d, (*dns)[b]);
    }
  }
  return total * inv_count;
}

}  // namespace emc
