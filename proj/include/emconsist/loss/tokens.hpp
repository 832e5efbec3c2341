#pragma once

// Projection of pooled pyramid levels to one d-dimensional token per level. Each level first
// passes through its own 1x1x1 adapter to a common channel count, then every level shares
// one two-layer MLP.

#include <string>
#include <vector>

#include "emconsist/core/config_reader.hpp"
#include "emconsist/nn/kernels.hpp"
#include "emconsist/nn/linear.hpp"
#include "emconsist/nn/params.hpp"
#include "emconsist/nn/pool.hpp"
#include "emconsist/nn/tensor.hpp"

namespace emc {

struct TokenConfig {
  int dim = 64;
  int adapter_channels = 2;

  nlohmann::json to_json() const { return {{"dim", dim}, {"adapter_channels", adapter_channels}}; }
  void read(ConfigReader& r) {
    r.get("dim", dim);
    r.get("adapter_channels", adapter_channels);
    r.check(dim >= 1, "dim", "must be >= 1");
    r.check(adapter_channels >= 1, "adapter_channels", "must be >= 1");
    r.finish();
  }
  bool operator==(const TokenConfig&) const = default;
};

inline int pooled_voxels() { return kPooledExtent * kPooledExtent * kPooledExtent; }

inline void add_token_params(ParamLayout& L, const std::vector<int>& level_channels, const TokenConfig& cfg) {
  for (std::size_t j = 0; j < level_channels.size(); ++j) {
    const std::string n = "tok.adapter" + std::to_string(j);
    L.add(n + ".w", {cfg.adapter_channels, level_channels[j]}, Init::fan_in_normal, level_channels[j]);
    L.add(n + ".b", {cfg.adapter_channels}, Init::zeros);
  }
  Linear::add(L, "tok.fc1", cfg.adapter_channels * pooled_voxels(), cfg.dim);
  Linear::add(L, "tok.fc2", cfg.dim, cfg.dim);
}

template <class T>
struct TokenCache {
  std::vector<T> adapted;  // N x (A*4096)
  std::vector<T> pre;      // N x d, before GELU
  std::vector<T> hidden;   // N x d
};

template <class T>
class TokenProjector {
 public:
  TokenProjector(const ParamLayout& L, int levels) {
    for (int j = 0; j < levels; ++j) {
      const auto& e = L.at("tok.adapter" + std::to_string(j) + ".w");
      adapters_.push_back({e.shape[1], e.offset, L.offset("tok.adapter" + std::to_string(j) + ".b")});
      channels_ = e.shape[0];
    }
    fc1_ = Linear::bind(L, "tok.fc1");
    fc2_ = Linear::bind(L, "tok.fc2");
  }

  int dim() const noexcept { return fc2_.out; }

  /// Returns N x d tokens, row j from pooled level j.
  std::vector<T> forward(const T* prm, const std::vector<Tensor<T>>& pooled, TokenCache<T>& c) const {
    const int N = static_cast<int>(adapters_.size());
    const std::size_t row = static_cast<std::size_t>(channels_) * pooled_voxels();
    c.adapted.assign(N * row, T(0));
    for (int j = 0; j < N; ++j) {
      const Adapter& a = adapters_[j];
      kernels::pointwise_forward(pooled[j].v.data(), a.cin, pooled[j].plane(), prm + a.w, prm + a.b, channels_,
                                 c.adapted.data() + j * row);
    }
    const int d = dim();
    c.pre.assign(static_cast<std::size_t>(N) * d, T(0));
    fc1_.forward(prm, c.adapted.data(), N, c.pre.data());
    c.hidden.resize(c.pre.size());
    for (std::size_t k = 0; k < c.pre.size(); ++k) c.hidden[k] = kernels::gelu(c.pre[k]);
    std::vector<T> out(static_cast<std::size_t>(N) * d);
    fc2_.forward(prm, c.hidden.data(), N, out.data());
    return out;
  }

  /// Accumulates parameter gradients into gp and pooled-level gradients into grad_pooled.
  void backward(const T* prm, const std::vector<Tensor<T>>& pooled, const TokenCache<T>& c, const std::vector<T>& dout,
                T* gp, std::vector<Tensor<T>>& grad_pooled) const {
    const int N = static_cast<int>(adapters_.size());
    const int d = dim();
    std::vector<T> dh(static_cast<std::size_t>(N) * d, T(0));
    fc2_.backward(prm, c.hidden.data(), N, dout.data(), gp, dh.data());
    for (std::size_t k = 0; k < dh.size(); ++k) dh[k] *= kernels::gelu_grad(c.pre[k]);
    const std::size_t row = static_cast<std::size_t>(channels_) * pooled_voxels();
    std::vector<T> dadapted(N * row, T(0));
    fc1_.backward(prm, c.adapted.data(), N, dh.data(), gp, dadapted.data());
    grad_pooled.resize(pooled.size());
    for (int j = 0; j < N; ++j) {
      const Adapter& a = adapters_[j];
      if (grad_pooled[j].empty()) grad_pooled[j] = Tensor<T>(pooled[j].c, pooled[j].s);
      kernels::pointwise_backward(pooled[j].v.data(), a.cin, pooled[j].plane(), prm + a.w, channels_,
                                  dadapted.data() + j * row, grad_pooled[j].v.data(), gp + a.w, gp + a.b);
    }
  }

 private:
  struct Adapter {
    int cin;
    std::size_t w, b;
  };
  std::vector<Adapter> adapters_;
  int channels_ = 0;
  Linear fc1_, fc2_;
};

}  // namespace emc
