#pragma once

// Multiscale similarity: one shared random channel per pooled level is flattened and
// concatenated for each branch; the strong vector passes through a bottleneck MLP and
// the loss is the negative cosine with the weak vector, averaged over the batch.

#include <algorithm>
#include <cmath>
#include <vector>

#include "emconsist/core/config_reader.hpp"
#include "emconsist/core/rng.hpp"
#include "emconsist/nn/kernels.hpp"
#include "emconsist/nn/linear.hpp"
#include "emconsist/nn/pool.hpp"
#include "emconsist/nn/tensor.hpp"

namespace emc {

struct SimConfig {
  int hidden = 64;
  bool stop_gradient = false;  // treat the weak vector as a constant target
  bool identity_mlp = false;   // test hook: skip the MLP entirely

  nlohmann::json to_json() const {
    return {{"hidden", hidden}, {"stop_gradient", stop_gradient}, {"identity_mlp", identity_mlp}};
  }
  void read(ConfigReader& r) {
    r.get("hidden", hidden);
    r.get("stop_gradient", stop_gradient);
    r.get("identity_mlp", identity_mlp);
    r.check(hidden >= 1, "hidden", "must be >= 1");
    r.finish();
  }
  bool operator==(const SimConfig&) const = default;
};

inline void add_sim_params(ParamLayout& L, int levels, const SimConfig& cfg) {
  const int len = levels * kPooledExtent * kPooledExtent * kPooledExtent;
  Linear::add(L, "sim.fc1", len, cfg.hidden);
  Linear::add(L, "sim.fc2", cfg.hidden, len);
}

/// One channel index per level, shared by both branches.
inline std::vector<int> sample_sim_channels(Rng& rng, const std::vector<int>& level_channels) {
  std::vector<int> out;
  out.reserve(level_channels.size());
  for (int c : level_channels) out.push_back(uniform_int(rng, 0, c - 1));
  return out;
}

/// Flattened selected channels of every level, concatenated in level order.
template <class T>
std::vector<T> concat_channels(const std::vector<Tensor<T>>& pooled, const std::vector<int>& channels) {
  require(channels.size() == pooled.size(), ErrorKind::validation, "need one similarity channel per level");
  std::vector<T> out;
  for (std::size_t j = 0; j < pooled.size(); ++j) {
    require(channels[j] >= 0 && channels[j] < pooled[j].c, ErrorKind::validation,
            "similarity channel " + std::to_string(channels[j]) + " out of range at level " + std::to_string(j));
    const T* src = pooled[j].ch(channels[j]);
    out.insert(out.end(), src, src + pooled[j].plane());
  }
  return out;
}

namespace detail {

/// cos(a, b), 0 when either vector has zero norm. Optionally accumulates g * dcos/da, g * dcos/db.
template <class T>
double cosine(const std::vector<T>& a, const std::vector<T>& b, double g = 0.0, std::vector<T>* da = nullptr,
              std::vector<T>* db = nullptr) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  const double c = ab / (na * nb);
  if (da)
    for (std::size_t i = 0; i < a.size(); ++i) (*da)[i] += static_cast<T>(g * (b[i] / (na * nb) - c * a[i] / aa));
  if (db)
    for (std::size_t i = 0; i < b.size(); ++i) (*db)[i] += static_cast<T>(g * (a[i] / (na * nb) - c * b[i] / bb));
  return c;
}

}  // namespace detail

template <class T>
class SimLoss {
 public:
  SimLoss(const ParamLayout& L, const SimConfig& cfg) : cfg_(cfg) {
    if (L.contains("sim.fc1.w")) {
      fc1_ = Linear::bind(L, "sim.fc1");
      fc2_ = Linear::bind(L, "sim.fc2");
    }
  }

  /// pooled_w[b], pooled_s[b] are the pooled pyramids of sample b. Gradients (scaled) are
  /// accumulated into grad_w / grad_s (same nesting) and gp when provided.
  double operator()(const T* prm, const std::vector<std::vector<Tensor<T>>>& pooled_w,
                    const std::vector<std::vector<Tensor<T>>>& pooled_s, const std::vector<int>& channels,
                    double scale = 1.0, T* gp = nullptr, std::vector<std::vector<Tensor<T>>>* grad_w = nullptr,
                    std::vector<std::vector<Tensor<T>>>* grad_s = nullptr) const {
    const int B = static_cast<int>(pooled_w.size());
    require(B >= 1 && pooled_s.size() == pooled_w.size(), ErrorKind::validation, "similarity batches must match");
    const bool grad = gp && grad_w && grad_s;
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
      const std::vector<T> wcat = concat_channels(pooled_w[b], channels);
      const std::vector<T> scat = concat_channels(pooled_s[b], channels);
      const int len = static_cast<int>(wcat.size());
      std::vector<T> pre, hid, z;
      if (cfg_.identity_mlp) {
        z = scat;
      } else {
        pre.assign(static_cast<std::size_t>(fc1_.out), T(0));
        fc1_.forward(prm, scat.data(), 1, pre.data());
        hid.resize(pre.size());
        for (std::size_t k = 0; k < pre.size(); ++k) hid[k] = kernels::gelu(pre[k]);
        z.assign(static_cast<std::size_t>(len), T(0));
        fc2_.forward(prm, hid.data(), 1, z.data());
      }
      if (!grad) {
        total -= detail::cosine(wcat, z);
        continue;
      }
      // -1/2 [cos(w, z) + cos(z, w)] == -cos(w, z)
      std::vector<T> dw(wcat.size(), T(0)), dz(z.size(), T(0));
      total -= detail::cosine(wcat, z, -scale / B, cfg_.stop_gradient ? nullptr : &dw, &dz);
      std::vector<T> ds;
      if (cfg_.identity_mlp) {
        ds = std::move(dz);
      } else {
        std::vector<T> dh(hid.size(), T(0));
        fc2_.backward(prm, hid.data(), 1, dz.data(), gp, dh.data());
        for (std::size_t k = 0; k < dh.size(); ++k) dh[k] *= kernels::gelu_grad(pre[k]);
        ds.assign(scat.size(), T(0));
        fc1_.backward(prm, scat.data(), 1, dh.data(), gp, ds.data());
      }
      scatter(pooled_w[b], channels, dw, (*grad_w)[b]);
      scatter(pooled_s[b], channels, ds, (*grad_s)[b]);
    }
    return total / B;
  }

 private:
  static void scatter(const std::vector<Tensor<T>>& pooled, const std::vector<int>& channels, const std::vector<T>& g,
                      std::vector<Tensor<T>>& out) {
    out.resize(pooled.size());
    std::size_t off = 0;
    for (std::size_t j = 0; j < pooled.size(); ++j) {
      if (out[j].empty()) out[j] = Tensor<T>(pooled[j].c, pooled[j].s);
      T* dst = out[j].ch(channels[j]);
      for (std::size_t k = 0; k < pooled[j].plane(); ++k) dst[k] += g[off + k];
      off += pooled[j].plane();
    }
  }

  SimConfig cfg_;
  Linear fc1_, fc2_;
};

}  // namespace emc
