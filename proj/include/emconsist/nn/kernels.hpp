#pragma once

// Dense CPU kernels with explicit backward passes. Feature layout is (C, D, H, W) with W
// contiguous; inner loops run along W so they vectorize. Reductions use
// `omp simd reduction` (enabled with -fopenmp-simd, no runtime needed).

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>
#include <algorithm>

#include "emconsist/core/shape.hpp"

namespace emc::kernels {

// ---------------------------------------------------------------------------
// 3x3x3 convolution, stride 1, zero padding 1. Weight layout [cout][cin][3][3][3].

template <class T>
void conv3_forward(const T* __restrict in, int cin, Shape3 s, const T* __restrict w, const T* __restrict b, int cout,
                   T* __restrict out) {
  const std::size_t P = s.size();
  const int W = s.w;
  for (int oc = 0; oc < cout; ++oc) {
    T* o = out + static_cast<std::size_t>(oc) * P;
    for (std::size_t i = 0; i < P; ++i) o[i] = b ? b[oc] : T(0);
    for (int z = 0; z < s.d; ++z)
      for (int y = 0; y < s.h; ++y) {
        T* __restrict orow = o + s.index(z, y, 0);
        for (int ic = 0; ic < cin; ++ic) {
          const T* wk = w + (static_cast<std::size_t>(oc) * cin + ic) * 27;
          for (int kd = 0; kd < 3; ++kd) {
            const int zz = z + kd - 1;
            if (zz < 0 || zz >= s.d) continue;
            for (int kh = 0; kh < 3; ++kh) {
              const int yy = y + kh - 1;
              if (yy < 0 || yy >= s.h) continue;
              const T* __restrict irow = in + static_cast<std::size_t>(ic) * P + s.index(zz, yy, 0);
              const T w0 = wk[kd * 9 + kh * 3 + 0], w1 = wk[kd * 9 + kh * 3 + 1], w2 = wk[kd * 9 + kh * 3 + 2];
              orow[0] += w1 * irow[0] + (W > 1 ? w2 * irow[1] : T(0));
              for (int x = 1; x < W - 1; ++x) orow[x] += w0 * irow[x - 1] + w1 * irow[x] + w2 * irow[x + 1];
              if (W > 1) orow[W - 1] += w0 * irow[W - 2] + w1 * irow[W - 1];
            }
          }
        }
      }
  }
}

/// Accumulates into grad_in (if non-null), grad_w and grad_b.
template <class T>
void conv3_backward(const T* __restrict in, int cin, Shape3 s, const T* __restrict w, int cout,
                    const T* __restrict gout, T* __restrict grad_in, T* __restrict grad_w, T* __restrict grad_b) {
  const std::size_t P = s.size();
  const int W = s.w;
  if (grad_b)
    for (int oc = 0; oc < cout; ++oc) {
      const T* g = gout + static_cast<std::size_t>(oc) * P;
      T acc = 0;
#pragma omp simd reduction(+ : acc)
      for (std::size_t i = 0; i < P; ++i) acc += g[i];
      grad_b[oc] += acc;
    }
  // Per-lane partial sums, reduced once per (oc, ic) pair.
  std::vector<T> lanes(27 * static_cast<std::size_t>(W));
  for (int oc = 0; oc < cout; ++oc)
    for (int ic = 0; ic < cin; ++ic) {
      std::fill(lanes.begin(), lanes.end(), T(0));
      for (int z = 0; z < s.d; ++z)
        for (int y = 0; y < s.h; ++y) {
          const T* __restrict grow = gout + static_cast<std::size_t>(oc) * P + s.index(z, y, 0);
          for (int kd = 0; kd < 3; ++kd) {
            const int zz = z + kd - 1;
            if (zz < 0 || zz >= s.d) continue;
            for (int kh = 0; kh < 3; ++kh) {
              const int yy = y + kh - 1;
              if (yy < 0 || yy >= s.h) continue;
              const T* __restrict irow = in + static_cast<std::size_t>(ic) * P + s.index(zz, yy, 0);
              T* __restrict l0 = lanes.data() + static_cast<std::size_t>(kd * 9 + kh * 3) * W;
              T* __restrict l1 = l0 + W;
              T* __restrict l2 = l1 + W;
              for (int x = 1; x < W; ++x) l0[x] += grow[x] * irow[x - 1];
              for (int x = 0; x < W; ++x) l1[x] += grow[x] * irow[x];
              for (int x = 0; x < W - 1; ++x) l2[x] += grow[x] * irow[x + 1];
            }
          }
        }
      T* gw = grad_w + (static_cast<std::size_t>(oc) * cin + ic) * 27;
      for (int k = 0; k < 27; ++k) {
        const T* l = lanes.data() + static_cast<std::size_t>(k) * W;
        T acc = 0;
        for (int x = 0; x < W; ++x) acc += l[x];
        gw[k] += acc;
      }
    }
  if (!grad_in) return;
  for (int ic = 0; ic < cin; ++ic)
    for (int z = 0; z < s.d; ++z)
      for (int y = 0; y < s.h; ++y) {
        T* __restrict girow = grad_in + static_cast<std::size_t>(ic) * P + s.index(z, y, 0);
        for (int oc = 0; oc < cout; ++oc) {
          const T* wk = w + (static_cast<std::size_t>(oc) * cin + ic) * 27;
          for (int kd = 0; kd < 3; ++kd) {
            const int zo = z - kd + 1;
            if (zo < 0 || zo >= s.d) continue;
            for (int kh = 0; kh < 3; ++kh) {
              const int yo = y - kh + 1;
              if (yo < 0 || yo >= s.h) continue;
              const T* __restrict grow = gout + static_cast<std::size_t>(oc) * P + s.index(zo, yo, 0);
              const T w0 = wk[kd * 9 + kh * 3 + 0], w1 = wk[kd * 9 + kh * 3 + 1], w2 = wk[kd * 9 + kh * 3 + 2];
              girow[0] += w1 * grow[0] + (W > 1 ? w0 * grow[1] : T(0));
              for (int x = 1; x < W - 1; ++x) girow[x] += w0 * grow[x + 1] + w1 * grow[x] + w2 * grow[x - 1];
              if (W > 1) girow[W - 1] += w1 * grow[W - 1] + w2 * grow[W - 2];
            }
          }
        }
      }
}

// ---------------------------------------------------------------------------
// 2x2x2 convolution with stride 2 (downsampling). Input shape is 2*out.
// Weight layout [cout][cin][2][2][2].

template <class T>
void down2_forward(const T* __restrict in, int cin, Shape3 so, const T* __restrict w, const T* __restrict b, int cout,
                   T* __restrict out) {
  const Shape3 si{so.d * 2, so.h * 2, so.w * 2};
  const std::size_t Pi = si.size(), Po = so.size();
  for (int oc = 0; oc < cout; ++oc) {
    T* o = out + static_cast<std::size_t>(oc) * Po;
    for (std::size_t i = 0; i < Po; ++i) o[i] = b ? b[oc] : T(0);
    for (int ic = 0; ic < cin; ++ic) {
      const T* wk = w + (static_cast<std::size_t>(oc) * cin + ic) * 8;
      for (int z = 0; z < so.d; ++z)
        for (int y = 0; y < so.h; ++y) {
          T* __restrict orow = o + so.index(z, y, 0);
          for (int a = 0; a < 2; ++a)
            for (int bb = 0; bb < 2; ++bb) {
              const T* __restrict irow = in + static_cast<std::size_t>(ic) * Pi + si.index(2 * z + a, 2 * y + bb, 0);
              const T w0 = wk[a * 4 + bb * 2], w1 = wk[a * 4 + bb * 2 + 1];
              for (int x = 0; x < so.w; ++x) orow[x] += w0 * irow[2 * x] + w1 * irow[2 * x + 1];
            }
        }
    }
  }
}

template <class T>
void down2_backward(const T* __restrict in, int cin, Shape3 so, const T* __restrict w, int cout,
                    const T* __restrict gout, T* __restrict grad_in, T* __restrict grad_w, T* __restrict grad_b) {
  const Shape3 si{so.d * 2, so.h * 2, so.w * 2};
  const std::size_t Pi = si.size(), Po = so.size();
  for (int oc = 0; oc < cout; ++oc) {
    const T* g = gout + static_cast<std::size_t>(oc) * Po;
    if (grad_b) {
      T acc = 0;
#pragma omp simd reduction(+ : acc)
      for (std::size_t i = 0; i < Po; ++i) acc += g[i];
      grad_b[oc] += acc;
    }
    for (int ic = 0; ic < cin; ++ic) {
      T acc[8] = {};
      const T* wk = w + (static_cast<std::size_t>(oc) * cin + ic) * 8;
      for (int z = 0; z < so.d; ++z)
        for (int y = 0; y < so.h; ++y) {
          const T* __restrict grow = g + so.index(z, y, 0);
          for (int a = 0; a < 2; ++a)
            for (int bb = 0; bb < 2; ++bb) {
              const std::size_t off = static_cast<std::size_t>(ic) * Pi + si.index(2 * z + a, 2 * y + bb, 0);
              const T* __restrict irow = in + off;
              T a0 = 0, a1 = 0;
#pragma omp simd reduction(+ : a0, a1)
              for (int x = 0; x < so.w; ++x) {
                a0 += grow[x] * irow[2 * x];
                a1 += grow[x] * irow[2 * x + 1];
              }
              acc[a * 4 + bb * 2] += a0;
              acc[a * 4 + bb * 2 + 1] += a1;
              if (grad_in) {
                T* __restrict girow = grad_in + off;
                const T w0 = wk[a * 4 + bb * 2], w1 = wk[a * 4 + bb * 2 + 1];
                for (int x = 0; x < so.w; ++x) {
                  girow[2 * x] += w0 * grow[x];
                  girow[2 * x + 1] += w1 * grow[x];
                }
              }
            }
        }
      T* gw = grad_w + (static_cast<std::size_t>(oc) * cin + ic) * 8;
      for (int k = 0; k < 8; ++k) gw[k] += acc[k];
    }
  }
}

// ---------------------------------------------------------------------------
// 2x2x2 transposed convolution with stride 2 (upsampling). Output shape is 2*in.
// Weight layout [cin][cout][2][2][2].

template <class T>
void up2_forward(const T* __restrict in, int cin, Shape3 si, const T* __restrict w, const T* __restrict b, int cout,
                 T* __restrict out) {
  const Shape3 so{si.d * 2, si.h * 2, si.w * 2};
  const std::size_t Pi = si.size(), Po = so.size();
  for (int oc = 0; oc < cout; ++oc) {
    T* o = out + static_cast<std::size_t>(oc) * Po;
    for (std::size_t i = 0; i < Po; ++i) o[i] = b ? b[oc] : T(0);
    for (int ic = 0; ic < cin; ++ic) {
      const T* wk = w + (static_cast<std::size_t>(ic) * cout + oc) * 8;
      for (int z = 0; z < si.d; ++z)
        for (int y = 0; y < si.h; ++y) {
          const T* __restrict irow = in + static_cast<std::size_t>(ic) * Pi + si.index(z, y, 0);
          for (int a = 0; a < 2; ++a)
            for (int bb = 0; bb < 2; ++bb) {
              T* __restrict orow = o + so.index(2 * z + a, 2 * y + bb, 0);
              const T w0 = wk[a * 4 + bb * 2], w1 = wk[a * 4 + bb * 2 + 1];
              for (int x = 0; x < si.w; ++x) {
                orow[2 * x] += w0 * irow[x];
                orow[2 * x + 1] += w1 * irow[x];
              }
            }
        }
    }
  }
}

template <class T>
void up2_backward(const T* __restrict in, int cin, Shape3 si, const T* __restrict w, int cout,
                  const T* __restrict gout, T* __restrict grad_in, T* __restrict grad_w, T* __restrict grad_b) {
  const Shape3 so{si.d * 2, si.h * 2, si.w * 2};
  const std::size_t Pi = si.size(), Po = so.size();
  if (grad_b)
    for (int oc = 0; oc < cout; ++oc) {
      const T* g = gout + static_cast<std::size_t>(oc) * Po;
      T acc = 0;
#pragma omp simd reduction(+ : acc)
      for (std::size_t i = 0; i < Po; ++i) acc += g[i];
      grad_b[oc] += acc;
    }
  for (int ic = 0; ic < cin; ++ic)
    for (int oc = 0; oc < cout; ++oc) {
      T acc[8] = {};
      const T* wk = w + (static_cast<std::size_t>(ic) * cout + oc) * 8;
      for (int z = 0; z < si.d; ++z)
        for (int y = 0; y < si.h; ++y) {
          const std::size_t ioff = static_cast<std::size_t>(ic) * Pi + si.index(z, y, 0);
          const T* __restrict irow = in + ioff;
          for (int a = 0; a < 2; ++a)
            for (int bb = 0; bb < 2; ++bb) {
              const T* __restrict grow = gout + static_cast<std::size_t>(oc) * Po + so.index(2 * z + a, 2 * y + bb, 0);
              T a0 = 0, a1 = 0;
#pragma omp simd reduction(+ : a0, a1)
              for (int x = 0; x < si.w; ++x) {
                a0 += irow[x] * grow[2 * x];
                a1 += irow[x] * grow[2 * x + 1];
              }
              acc[a * 4 + bb * 2] += a0;
              acc[a * 4 + bb * 2 + 1] += a1;
              if (grad_in) {
                T* __restrict girow = grad_in + ioff;
                const T w0 = wk[a * 4 + bb * 2], w1 = wk[a * 4 + bb * 2 + 1];
                for (int x = 0; x < si.w; ++x) girow[x] += w0 * grow[2 * x] + w1 * grow[2 * x + 1];
              }
            }
        }
      T* gw = grad_w + (static_cast<std::size_t>(ic) * cout + oc) * 8;
      for (int k = 0; k < 8; ++k) gw[k] += acc[k];
    }
}

// ---------------------------------------------------------------------------
// 1x1x1 convolution. Weight layout [cout][cin].

template <class T>
void pointwise_forward(const T* __restrict in, int cin, std::size_t P, const T* __restrict w, const T* __restrict b,
                       int cout, T* __restrict out) {
  for (int oc = 0; oc < cout; ++oc) {
    T* __restrict o = out + static_cast<std::size_t>(oc) * P;
    const T bias = b ? b[oc] : T(0);
    for (std::size_t i = 0; i < P; ++i) o[i] = bias;
    for (int ic = 0; ic < cin; ++ic) {
      const T wv = w[static_cast<std::size_t>(oc) * cin + ic];
      const T* __restrict src = in + static_cast<std::size_t>(ic) * P;
      for (std::size_t i = 0; i < P; ++i) o[i] += wv * src[i];
    }
  }
}

template <class T>
void pointwise_backward(const T* __restrict in, int cin, std::size_t P, const T* __restrict w, int cout,
                        const T* __restrict gout, T* __restrict grad_in, T* __restrict grad_w,
                        T* __restrict grad_b) {
  for (int oc = 0; oc < cout; ++oc) {
    const T* __restrict g = gout + static_cast<std::size_t>(oc) * P;
    if (grad_b) {
      T acc = 0;
#pragma omp simd reduction(+ : acc)
      for (std::size_t i = 0; i < P; ++i) acc += g[i];
      grad_b[oc] += acc;
    }
    for (int ic = 0; ic < cin; ++ic) {
      const T* __restrict src = in + static_cast<std::size_t>(ic) * P;
      T acc = 0;
#pragma omp simd reduction(+ : acc)
      for (std::size_t i = 0; i < P; ++i) acc += g[i] * src[i];
      grad_w[static_cast<std::size_t>(oc) * cin + ic] += acc;
      if (grad_in) {
        const T wv = w[static_cast<std::size_t>(oc) * cin + ic];
        T* __restrict gi = grad_in + static_cast<std::size_t>(ic) * P;
        for (std::size_t i = 0; i < P; ++i) gi[i] += wv * g[i];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Row-major matrix products. Shapes are given as (rows, cols) of the stored operands.

/// C[m x n] += A[m x k] * B[k x n]
template <class T>
void matmul_acc(const T* __restrict A, const T* __restrict B, T* __restrict C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    T* __restrict c = C + static_cast<std::size_t>(i) * n;
    const T* a = A + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T av = a[p];
      const T* __restrict b = B + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

/// C[m x n] += A^T * B with A stored [k x m] and B stored [k x n].
template <class T>
void matmul_tn_acc(const T* __restrict A, const T* __restrict B, T* __restrict C, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const T* a = A + static_cast<std::size_t>(p) * m;
    const T* __restrict b = B + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const T av = a[i];
      T* __restrict c = C + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

/// C[m x n] += A * B^T with A stored [m x k] and B stored [n x k].
template <class T>
void matmul_nt_acc(const T* __restrict A, const T* __restrict B, T* __restrict C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* __restrict a = A + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const T* __restrict b = B + static_cast<std::size_t>(j) * k;
      T acc = 0;
#pragma omp simd reduction(+ : acc)
      for (int p = 0; p < k; ++p) acc += a[p] * b[p];
      C[static_cast<std::size_t>(i) * n + j] += acc;
    }
  }
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities.

template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <class T>
T sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

/// log(1 + exp(x)) without overflow.
template <class T>
T softplus(T x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace emc::kernels
