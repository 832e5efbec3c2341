#pragma once

// Small pre-norm vision transformer over non-overlapping cubic tokens. The encoder output
// is returned as a channel-major grid (embed, D/t, H/t, W/t) for the convolutional decoder.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "emconsist/nn/kernels.hpp"
#include "emconsist/nn/params.hpp"
#include "emconsist/nn/tensor.hpp"

namespace emc {

struct VitDims {
  Shape3 patch;
  int token = 4;
  int embed = 64;
  int blocks = 2;
  int heads = 4;
  int hidden = 128;

  Shape3 grid() const { return {patch.d / token, patch.h / token, patch.w / token}; }
  int tokens() const { return static_cast<int>(grid().size()); }
  int token_voxels() const { return token * token * token; }
};

inline void add_vit_params(ParamLayout& L, const std::string& pre, const VitDims& d) {
  const int E = d.embed, P = d.tokens(), V = d.token_voxels(), H = d.hidden;
  L.add(pre + "patch.w", {V, E}, Init::fan_in_normal, V);
  L.add(pre + "patch.b", {E}, Init::zeros);
  L.add(pre + "pos", {P, E}, Init::small_normal);
  for (int b = 0; b < d.blocks; ++b) {
    const std::string bp = pre + "blk" + std::to_string(b) + ".";
    L.add(bp + "ln1.g", {E}, Init::ones);
    L.add(bp + "ln1.b", {E}, Init::zeros);
    L.add(bp + "qkv.w", {E, 3 * E}, Init::scaled_normal, E);
    L.add(bp + "qkv.b", {3 * E}, Init::zeros);
    L.add(bp + "proj.w", {E, E}, Init::fan_in_normal, E);
    L.add(bp + "proj.b", {E}, Init::zeros);
    L.add(bp + "ln2.g", {E}, Init::ones);
    L.add(bp + "ln2.b", {E}, Init::zeros);
    L.add(bp + "fc1.w", {E, H}, Init::he_normal, E);
    L.add(bp + "fc1.b", {H}, Init::zeros);
    L.add(bp + "fc2.w", {H, E}, Init::fan_in_normal, H);
    L.add(bp + "fc2.b", {E}, Init::zeros);
  }
  L.add(pre + "lnf.g", {E}, Init::ones);
  L.add(pre + "lnf.b", {E}, Init::zeros);
}

namespace detail {

inline constexpr double kLayerNormEps = 1e-5;

template <class T>
void layernorm_forward(const T* x, int rows, int n, const T* g, const T* b, T* y, T* mu, T* rstd) {
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<std::size_t>(r) * n;
    T* yr = y + static_cast<std::size_t>(r) * n;
    T m = 0;
    for (int i = 0; i < n; ++i) m += xr[i];
    m /= T(n);
    T var = 0;
    for (int i = 0; i < n; ++i) var += (xr[i] - m) * (xr[i] - m);
    var /= T(n);
    const T rs = T(1) / std::sqrt(var + T(kLayerNormEps));
    mu[r] = m;
    rstd[r] = rs;
    for (int i = 0; i < n; ++i) yr[i] = (xr[i] - m) * rs * g[i] + b[i];
  }
}

template <class T>
void layernorm_backward(const T* x, int rows, int n, const T* g, const T* mu, const T* rstd, const T* dy, T* dx,
                        T* dg, T* db) {
  std::vector<T> dxhat(static_cast<std::size_t>(n));
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<std::size_t>(r) * n;
    const T* dyr = dy + static_cast<std::size_t>(r) * n;
    T* dxr = dx + static_cast<std::size_t>(r) * n;
    T mean_d = 0, mean_dx = 0;
    for (int i = 0; i < n; ++i) {
      const T xhat = (xr[i] - mu[r]) * rstd[r];
      dg[i] += dyr[i] * xhat;
      db[i] += dyr[i];
      dxhat[static_cast<std::size_t>(i)] = dyr[i] * g[i];
      mean_d += dxhat[static_cast<std::size_t>(i)];
      mean_dx += dxhat[static_cast<std::size_t>(i)] * xhat;
    }
    mean_d /= T(n);
    mean_dx /= T(n);
    for (int i = 0; i < n; ++i) {
      const T xhat = (xr[i] - mu[r]) * rstd[r];
      dxr[i] += rstd[r] * (dxhat[static_cast<std::size_t>(i)] - mean_d - xhat * mean_dx);
    }
  }
}

template <class T>
void add_bias_rows(T* y, int rows, int n, const T* b) {
  for (int r = 0; r < rows; ++r)
    for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(r) * n + i] += b[i];
}

template <class T>
void bias_grad_rows(const T* dy, int rows, int n, T* db) {
  for (int r = 0; r < rows; ++r)
    for (int i = 0; i < n; ++i) db[i] += dy[static_cast<std::size_t>(r) * n + i];
}

}  // namespace detail

template <class T>
struct VitBlockCache {
  std::vector<T> h_in, n1, mu1, rs1, qkv, probs, attn, h_mid, n2, mu2, rs2, f1, act;
};

template <class T>
struct VitCache {
  std::vector<T> tokens_in;  // P x token_voxels
  std::vector<VitBlockCache<T>> blocks;
  std::vector<T> h_last, mu_f, rs_f;
};

template <class T>
class VitEncoder {
 public:
  VitEncoder() = default;
  VitEncoder(const VitDims& dims, const ParamLayout& L, const std::string& pre) : dims_(dims) {
    patch_w_ = L.offset(pre + "patch.w");
    patch_b_ = L.offset(pre + "patch.b");
    pos_ = L.offset(pre + "pos");
    for (int b = 0; b < dims.blocks; ++b) {
      const std::string bp = pre + "blk" + std::to_string(b) + ".";
      BlockOffsets o;
      o.ln1g = L.offset(bp + "ln1.g");
      o.ln1b = L.offset(bp + "ln1.b");
      o.qkvw = L.offset(bp + "qkv.w");
      o.qkvb = L.offset(bp + "qkv.b");
      o.projw = L.offset(bp + "proj.w");
      o.projb = L.offset(bp + "proj.b");
      o.ln2g = L.offset(bp + "ln2.g");
      o.ln2b = L.offset(bp + "ln2.b");
      o.fc1w = L.offset(bp + "fc1.w");
      o.fc1b = L.offset(bp + "fc1.b");
      o.fc2w = L.offset(bp + "fc2.w");
      o.fc2b = L.offset(bp + "fc2.b");
      blocks_.push_back(o);
    }
    lnf_g_ = L.offset(pre + "lnf.g");
    lnf_b_ = L.offset(pre + "lnf.b");
  }

  const VitDims& dims() const noexcept { return dims_; }

  Tensor<T> forward(const T* prm, const Tensor<T>& x, VitCache<T>& cache) const {
    const int E = dims_.embed, P = dims_.tokens(), V = dims_.token_voxels(), t = dims_.token;
    const Shape3 g = dims_.grid();
    const std::size_t PE = static_cast<std::size_t>(P) * E;

    cache.tokens_in.assign(static_cast<std::size_t>(P) * V, T(0));
    for (int pz = 0; pz < g.d; ++pz)
      for (int py = 0; py < g.h; ++py)
        for (int px = 0; px < g.w; ++px) {
          T* row = cache.tokens_in.data() + g.index(pz, py, px) * V;
          int k = 0;
          for (int a = 0; a < t; ++a)
            for (int b = 0; b < t; ++b)
              for (int c = 0; c < t; ++c) row[k++] = x.at(0, pz * t + a, py * t + b, px * t + c);
        }
    std::vector<T> h(prm + pos_, prm + pos_ + PE);
    detail::add_bias_rows(h.data(), P, E, prm + patch_b_);
    kernels::matmul_acc(cache.tokens_in.data(), prm + patch_w_, h.data(), P, V, E);

    cache.blocks.resize(blocks_.size());
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) h = block_forward(prm, blocks_[bi], std::move(h), cache.blocks[bi]);

    cache.h_last = h;
    cache.mu_f.resize(static_cast<std::size_t>(P));
    cache.rs_f.resize(static_cast<std::size_t>(P));
    std::vector<T> hf(PE);
    detail::layernorm_forward(h.data(), P, E, prm + lnf_g_, prm + lnf_b_, hf.data(), cache.mu_f.data(),
                              cache.rs_f.data());
    Tensor<T> out(E, g);
    for (int p = 0; p < P; ++p)
      for (int e = 0; e < E; ++e) out.v[static_cast<std::size_t>(e) * P + p] = hf[static_cast<std::size_t>(p) * E + e];
    return out;
  }

  void backward(const T* prm, const VitCache<T>& cache, const Tensor<T>& grad_out, T* gp, Tensor<T>* grad_x) const {
    const int E = dims_.embed, P = dims_.tokens(), V = dims_.token_voxels(), t = dims_.token;
    const Shape3 g = dims_.grid();
    const std::size_t PE = static_cast<std::size_t>(P) * E;
    std::vector<T> dhf(PE);
    for (int p = 0; p < P; ++p)
      for (int e = 0; e < E; ++e) dhf[static_cast<std::size_t>(p) * E + e] = grad_out.v[static_cast<std::size_t>(e) * P + p];
    std::vector<T> dh(PE, T(0));
    detail::layernorm_backward(cache.h_last.data(), P, E, prm + lnf_g_, cache.mu_f.data(), cache.rs_f.data(),
                               dhf.data(), dh.data(), gp + lnf_g_, gp + lnf_b_);
    for (std::size_t bi = blocks_.size(); bi-- > 0;) dh = block_backward(prm, blocks_[bi], cache.blocks[bi], dh, gp);

    for (std::size_t i = 0; i < PE; ++i) gp[pos_ + i] += dh[i];
    detail::bias_grad_rows(dh.data(), P, E, gp + patch_b_);
    kernels::matmul_tn_acc(cache.tokens_in.data(), dh.data(), gp + patch_w_, V, P, E);
    if (grad_x) {
      std::vector<T> dtok(static_cast<std::size_t>(P) * V, T(0));
      kernels::matmul_nt_acc(dh.data(), prm + patch_w_, dtok.data(), P, E, V);
      for (int pz = 0; pz < g.d; ++pz)
        for (int py = 0; py < g.h; ++py)
          for (int px = 0; px < g.w; ++px) {
            const T* row = dtok.data() + g.index(pz, py, px) * V;
            int k = 0;
            for (int a = 0; a < t; ++a)
              for (int b = 0; b < t; ++b)
                for (int c = 0; c < t; ++c) grad_x->at(0, pz * t + a, py * t + b, px * t + c) += row[k++];
          }
    }
  }

 private:
  struct BlockOffsets {
    std::size_t ln1g, ln1b, qkvw, qkvb, projw, projb, ln2g, ln2b, fc1w, fc1b, fc2w, fc2b;
  };

  std::vector<T> block_forward(const T* prm, const BlockOffsets& o, std::vector<T> h, VitBlockCache<T>& c) const {
    const int E = dims_.embed, P = dims_.tokens(), Hd = dims_.hidden, heads = dims_.heads, dh = E / heads;
    const std::size_t PE = static_cast<std::size_t>(P) * E;
    const T scale = T(1) / std::sqrt(T(dh));
    c.h_in = std::move(h);
    c.n1.assign(PE, T(0));
    c.mu1.resize(static_cast<std::size_t>(P));
    c.rs1.resize(static_cast<std::size_t>(P));
    detail::layernorm_forward(c.h_in.data(), P, E, prm + o.ln1g, prm + o.ln1b, c.n1.data(), c.mu1.data(), c.rs1.data());
    c.qkv.assign(static_cast<std::size_t>(P) * 3 * E, T(0));
    detail::add_bias_rows(c.qkv.data(), P, 3 * E, prm + o.qkvb);
    kernels::matmul_acc(c.n1.data(), prm + o.qkvw, c.qkv.data(), P, E, 3 * E);

    c.probs.assign(static_cast<std::size_t>(heads) * P * P, T(0));
    c.attn.assign(PE, T(0));
    const std::size_t row = static_cast<std::size_t>(3) * E;
    for (int hh = 0; hh < heads; ++hh) {
      T* A = c.probs.data() + static_cast<std::size_t>(hh) * P * P;
      for (int i = 0; i < P; ++i) {
        const T* q = c.qkv.data() + i * row + hh * dh;
        T* Ai = A + static_cast<std::size_t>(i) * P;
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < P; ++j) {
          const T* k = c.qkv.data() + j * row + E + hh * dh;
          T s = 0;
#pragma omp simd reduction(+ : s)
          for (int u = 0; u < dh; ++u) s += q[u] * k[u];
          Ai[j] = s * scale;
          mx = std::max(mx, Ai[j]);
        }
        T sum = 0;
        for (int j = 0; j < P; ++j) {
          Ai[j] = std::exp(Ai[j] - mx);
          sum += Ai[j];
        }
        const T inv = T(1) / sum;
        T* out = c.attn.data() + static_cast<std::size_t>(i) * E + hh * dh;
        for (int j = 0; j < P; ++j) {
          Ai[j] *= inv;
          const T a = Ai[j];
          const T* v = c.qkv.data() + j * row + 2 * E + hh * dh;
          for (int u = 0; u < dh; ++u) out[u] += a * v[u];
        }
      }
    }
    c.h_mid = c.h_in;
    detail::add_bias_rows(c.h_mid.data(), P, E, prm + o.projb);
    kernels::matmul_acc(c.attn.data(), prm + o.projw, c.h_mid.data(), P, E, E);

    c.n2.assign(PE, T(0));
    c.mu2.resize(static_cast<std::size_t>(P));
    c.rs2.resize(static_cast<std::size_t>(P));
    detail::layernorm_forward(c.h_mid.data(), P, E, prm + o.ln2g, prm + o.ln2b, c.n2.data(), c.mu2.data(), c.rs2.data());
    c.f1.assign(static_cast<std::size_t>(P) * Hd, T(0));
    detail::add_bias_rows(c.f1.data(), P, Hd, prm + o.fc1b);
    kernels::matmul_acc(c.n2.data(), prm + o.fc1w, c.f1.data(), P, E, Hd);
    c.act.resize(c.f1.size());
    for (std::size_t i = 0; i < c.f1.size(); ++i) c.act[i] = kernels::gelu(c.f1[i]);
    std::vector<T> out = c.h_mid;
    detail::add_bias_rows(out.data(), P, E, prm + o.fc2b);
    kernels::matmul_acc(c.act.data(), prm + o.fc2w, out.data(), P, Hd, E);
    return out;
  }

  std::vector<T> block_backward(const T* prm, const BlockOffsets& o, const VitBlockCache<T>& c,
                                const std::vector<T>& dout, T* gp) const {
    const int E = dims_.embed, P = dims_.tokens(), Hd = dims_.hidden, heads = dims_.heads, dh = E / heads;
    const std::size_t PE = static_cast<std::size_t>(P) * E;
    const T scale = T(1) / std::sqrt(T(dh));

    // MLP branch.
    std::vector<T> dmid = dout;
    detail::bias_grad_rows(dout.data(), P, E, gp + o.fc2b);
    kernels::matmul_tn_acc(c.act.data(), dout.data(), gp + o.fc2w, Hd, P, E);
    std::vector<T> dact(static_cast<std::size_t>(P) * Hd, T(0));
    kernels::matmul_nt_acc(dout.data(), prm + o.fc2w, dact.data(), P, E, Hd);
    for (std::size_t i = 0; i < dact.size(); ++i) dact[i] *= kernels::gelu_grad(c.f1[i]);
    detail::bias_grad_rows(dact.data(), P, Hd, gp + o.fc1b);
    kernels::matmul_tn_acc(c.n2.data(), dact.data(), gp + o.fc1w, E, P, Hd);
    std::vector<T> dn2(PE, T(0));
    kernels::matmul_nt_acc(dact.data(), prm + o.fc1w, dn2.data(), P, Hd, E);
    detail::layernorm_backward(c.h_mid.data(), P, E, prm + o.ln2g, c.mu2.data(), c.rs2.data(), dn2.data(),
                               dmid.data(), gp + o.ln2g, gp + o.ln2b);

    // Attention branch.
    std::vector<T> din = dmid;
    detail::bias_grad_rows(dmid.data(), P, E, gp + o.projb);
    kernels::matmul_tn_acc(c.attn.data(), dmid.data(), gp + o.projw, E, P, E);
    std::vector<T> dattn(PE, T(0));
    kernels::matmul_nt_acc(dmid.data(), prm + o.projw, dattn.data(), P, E, E);

    const std::size_t row = static_cast<std::size_t>(3) * E;
    std::vector<T> dqkv(static_cast<std::size_t>(P) * row, T(0));
    std::vector<T> dA(static_cast<std::size_t>(P));
    for (int hh = 0; hh < heads; ++hh) {
      const T* A = c.probs.data() + static_cast<std::size_t>(hh) * P * P;
      for (int i = 0; i < P; ++i) {
        const T* Ai = A + static_cast<std::size_t>(i) * P;
        const T* dOi = dattn.data() + static_cast<std::size_t>(i) * E + hh * dh;
        T dot = 0;
        for (int j = 0; j < P; ++j) {
          const T* v = c.qkv.data() + j * row + 2 * E + hh * dh;
          T* dv = dqkv.data() + j * row + 2 * E + hh * dh;
          T s = 0;
#pragma omp simd reduction(+ : s)
          for (int u = 0; u < dh; ++u) s += dOi[u] * v[u];
          for (int u = 0; u < dh; ++u) dv[u] += Ai[j] * dOi[u];
          dA[static_cast<std::size_t>(j)] = s;
          dot += s * Ai[j];
        }
        const T* q = c.qkv.data() + i * row + hh * dh;
        T* dq = dqkv.data() + i * row + hh * dh;
        for (int j = 0; j < P; ++j) {
          const T ds = Ai[j] * (dA[static_cast<std::size_t>(j)] - dot) * scale;
          const T* k = c.qkv.data() + j * row + E + hh * dh;
          T* dk = dqkv.data() + j * row + E + hh * dh;
          for (int u = 0; u < dh; ++u) {
            dq[u] += ds * k[u];
            dk[u] += ds * q[u];
          }
        }
      }
    }
    detail::bias_grad_rows(dqkv.data(), P, 3 * E, gp + o.qkvb);
    kernels::matmul_tn_acc(c.n1.data(), dqkv.data(), gp + o.qkvw, E, P, 3 * E);
    std::vector<T> dn1(PE, T(0));
    kernels::matmul_nt_acc(dqkv.data(), prm + o.qkvw, dn1.data(), P, 3 * E, E);
    detail::layernorm_backward(c.h_in.data(), P, E, prm + o.ln1g, c.mu1.data(), c.rs1.data(), dn1.data(), din.data(),
                               gp + o.ln1g, gp + o.ln1b);
    return din;
  }

  VitDims dims_;
  std::size_t patch_w_ = 0, patch_b_ = 0, pos_ = 0, lnf_g_ = 0, lnf_b_ = 0;
  std::vector<BlockOffsets> blocks_;
};

}  // namespace emc
