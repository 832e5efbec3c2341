#pragma once

// Bidirectional cross-attention between the weak and strong token sets of one sample.
//   v[j][k] = softmax_k((Q w_j) . (K s_k) / sqrt(d)),  m_j = sum_k v[j][k] V s_k
//   o[j][k] = softmax_k((Q s_j) . (K w_k) / sqrt(d)),  n_j = sum_k o[j][k] V w_k
// Q, K, V are d x d, stored [out][in]. Token sets are row-major N x d.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "emconsist/nn/params.hpp"

namespace emc {

inline void add_attention_params(ParamLayout& L, int dim) {
  L.add("attn.q", {dim, dim}, Init::scaled_normal, dim);
  L.add("attn.k", {dim, dim}, Init::scaled_normal, dim);
  L.add("attn.v", {dim, dim}, Init::scaled_normal, dim);
}

template <class T>
struct AttendedTokens {
  int levels = 0, dim = 0;
  std::vector<T> m, n;      // N x d
  std::vector<T> v, omega;  // N x N, rows sum to 1
  // Projections kept for the backward pass.
  std::vector<T> qw, kw, vw, qs, ks, vs;
};

namespace detail {

/// Y[N x d] = X[N x d] M^T for M stored [out][in].
template <class T>
std::vector<T> project_rows(const T* M, const std::vector<T>& X, int N, int d) {
  std::vector<T> Y(static_cast<std::size_t>(N) * d, T(0));
  for (int r = 0; r < N; ++r)
    for (int o = 0; o < d; ++o) {
      T acc = 0;
      for (int i = 0; i < d; ++i) acc += M[static_cast<std::size_t>(o) * d + i] * X[static_cast<std::size_t>(r) * d + i];
      Y[static_cast<std::size_t>(r) * d + o] = acc;
    }
  return Y;
}

/// Given dY for Y = X M^T: dM += dY^T X, dX += dY M.
template <class T>
void project_rows_backward(const T* M, const std::vector<T>& X, const std::vector<T>& dY, int N, int d, T* dM,
                           std::vector<T>& dX) {
  for (int r = 0; r < N; ++r)
    for (int o = 0; o < d; ++o) {
      const T g = dY[static_cast<std::size_t>(r) * d + o];
      for (int i = 0; i < d; ++i) {
        dM[static_cast<std::size_t>(o) * d + i] += g * X[static_cast<std::size_t>(r) * d + i];
        dX[static_cast<std::size_t>(r) * d + i] += g * M[static_cast<std::size_t>(o) * d + i];
      }
    }
}

/// Row softmax of (q . k) / sqrt(d); returns P (N x N) and out = P val.
template <class T>
void attend(const std::vector<T>& q, const std::vector<T>& k, const std::vector<T>& val, int N, int d,
            std::vector<T>& P, std::vector<T>& out) {
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  P.assign(static_cast<std::size_t>(N) * N, T(0));
  out.assign(static_cast<std::size_t>(N) * d, T(0));
  for (int j = 0; j < N; ++j) {
    T* row = P.data() + static_cast<std::size_t>(j) * N;
    T mx = -std::numeric_limits<T>::infinity();
    for (int c = 0; c < N; ++c) {
      T acc = 0;
      for (int i = 0; i < d; ++i) acc += q[static_cast<std::size_t>(j) * d + i] * k[static_cast<std::size_t>(c) * d + i];
      row[c] = acc * scale;
      mx = std::max(mx, row[c]);
    }
    T sum = 0;
    for (int c = 0; c < N; ++c) sum += (row[c] = std::exp(row[c] - mx));
    for (int c = 0; c < N; ++c) row[c] /= sum;
    for (int c = 0; c < N; ++c)
      for (int i = 0; i < d; ++i)
        out[static_cast<std::size_t>(j) * d + i] += row[c] * val[static_cast<std::size_t>(c) * d + i];
  }
}

template <class T>
void attend_backward(const std::vector<T>& q, const std::vector<T>& k, const std::vector<T>& val,
                     const std::vector<T>& P, const std::vector<T>& dout, int N, int d, std::vector<T>& dq,
                     std::vector<T>& dk, std::vector<T>& dval) {
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  std::vector<T> dP(static_cast<std::size_t>(N) * N, T(0));
  for (int j = 0; j < N; ++j)
    for (int c = 0; c < N; ++c) {
      T acc = 0;
      const T p = P[static_cast<std::size_t>(j) * N + c];
      for (int i = 0; i < d; ++i) {
        const T g = dout[static_cast<std::size_t>(j) * d + i];
        acc += g * val[static_cast<std::size_t>(c) * d + i];
        dval[static_cast<std::size_t>(c) * d + i] += p * g;
      }
      dP[static_cast<std::size_t>(j) * N + c] = acc;
    }
  for (int j = 0; j < N; ++j) {
    T dot = 0;
    for (int c = 0; c < N; ++c) dot += P[static_cast<std::size_t>(j) * N + c] * dP[static_cast<std::size_t>(j) * N + c];
    for (int c = 0; c < N; ++c) {
      const T dz = P[static_cast<std::size_t>(j) * N + c] * (dP[static_cast<std::size_t>(j) * N + c] - dot) * scale;
      for (int i = 0; i < d; ++i) {
        dq[static_cast<std::size_t>(j) * d + i] += dz * k[static_cast<std::size_t>(c) * d + i];
        dk[static_cast<std::size_t>(c) * d + i] += dz * q[static_cast<std::size_t>(j) * d + i];
      }
    }
  }
}

}  // namespace detail

template <class T>
class CrossAttention {
 public:
  explicit CrossAttention(const ParamLayout& L)
      : q_(L.offset("attn.q")), k_(L.offset("attn.k")), v_(L.offset("attn.v")), d_(L.at("attn.q").shape[0]) {}

  int dim() const noexcept { return d_; }

  AttendedTokens<T> forward(const T* prm, const std::vector<T>& tw, const std::vector<T>& ts) const {
    AttendedTokens<T> a;
    a.dim = d_;
    a.levels = static_cast<int>(tw.size() / static_cast<std::size_t>(d_));
    const int N = a.levels;
    a.qw = detail::project_rows(prm + q_, tw, N, d_);
    a.kw = detail::project_rows(prm + k_, tw, N, d_);
    a.vw = detail::project_rows(prm + v_, tw, N, d_);
    a.qs = detail::project_rows(prm + q_, ts, N, d_);
    a.ks = detail::project_rows(prm + k_, ts, N, d_);
    a.vs = detail::project_rows(prm + v_, ts, N, d_);
    detail::attend(a.qw, a.ks, a.vs, N, d_, a.v, a.m);
    detail::attend(a.qs, a.kw, a.vw, N, d_, a.omega, a.n);
    return a;
  }

  /// Accumulates gradients into gp (Q, K, V) and dtw / dts (sized N x d).
  void backward(const T* prm, const std::vector<T>& tw, const std::vector<T>& ts, const AttendedTokens<T>& a,
                const std::vector<T>& dm, const std::vector<T>& dn, T* gp, std::vector<T>& dtw,
                std::vector<T>& dts) const {
    const int N = a.levels;
    const std::size_t sz = static_cast<std::size_t>(N) * d_;
    std::vector<T> dqw(sz, T(0)), dkw(sz, T(0)), dvw(sz, T(0)), dqs(sz, T(0)), dks(sz, T(0)), dvs(sz, T(0));
    detail::attend_backward(a.qw, a.ks, a.vs, a.v, dm, N, d_, dqw, dks, dvs);
    detail::attend_backward(a.qs, a.kw, a.vw, a.omega, dn, N, d_, dqs, dkw, dvw);
    dtw.resize(sz, T(0));
    dts.resize(sz, T(0));
    detail::project_rows_backward(prm + q_, tw, dqw, N, d_, gp + q_, dtw);
    detail::project_rows_backward(prm + k_, tw, dkw, N, d_, gp + k_, dtw);
    detail::project_rows_backward(prm + v_, tw, dvw, N, d_, gp + v_, dtw);
    detail::project_rows_backward(prm + q_, ts, dqs, N, d_, gp + q_, dts);
    detail::project_rows_backward(prm + k_, ts, dks, N, d_, gp + k_, dts);
    detail::project_rows_backward(prm + v_, ts, dvs, N, d_, gp + v_, dts);
  }

 private:
  std::size_t q_, k_, v_;
  int d_;
};

}  // namespace emc
