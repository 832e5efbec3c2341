#pragma once

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emconsist/core/config_reader.hpp"
#include "emconsist/nn/kernels.hpp"
#include "emconsist/nn/params.hpp"
#include "emconsist/nn/tensor.hpp"
#include "emconsist/nn/vit.hpp"

namespace emc {

enum class BackboneVariant { unet_noskip, vit };

inline const char* to_string(BackboneVariant v) { return v == BackboneVariant::vit ? "vit" : "unet_noskip"; }

struct BackboneConfig {
  BackboneVariant variant = BackboneVariant::unet_noskip;
  Shape3 patch = Shape3::cube(32);
  std::vector<int> channels{8, 16, 32};  // encoder stages, shallow to deep; decoder mirrors them
  int token = 4;                          // vit only
  int embed = 64;
  int blocks = 2;
  int heads = 4;
  int mlp_hidden = 128;

  int levels() const noexcept { return static_cast<int>(channels.size()); }
  /// Channels of pyramid level j (0 = deepest decoder stage, N-1 = full resolution).
  int level_channels(int j) const { return channels[static_cast<std::size_t>(levels() - 1 - j)]; }
  Shape3 level_shape(int j) const {
    const int f = 1 << (levels() - 1 - j);
    return {patch.d / f, patch.h / f, patch.w / f};
  }
  VitDims vit_dims() const { return {patch, token, embed, blocks, heads, mlp_hidden}; }

  void validate() const {
    require(levels() >= 2, ErrorKind::validation, "backbone needs at least 2 pyramid levels");
    for (int c : channels) require(c >= 1, ErrorKind::validation, "channel counts must be positive");
    const int f = 1 << (levels() - 1);
    require(patch.d % f == 0 && patch.h % f == 0 && patch.w % f == 0 && patch.d >= f, ErrorKind::validation,
            "patch " + patch.str() + " must be divisible by 2^(levels-1) = " + std::to_string(f));
    if (variant == BackboneVariant::vit) {
      require(token == f, ErrorKind::validation,
              "vit token size must equal 2^(levels-1) = " + std::to_string(f) + " so the decoder returns to full size");
      require(embed >= 1 && heads >= 1 && embed % heads == 0, ErrorKind::validation, "embed must be divisible by heads");
      require(blocks >= 0 && mlp_hidden >= 1, ErrorKind::validation, "invalid vit block configuration");
    }
  }

  nlohmann::json to_json() const {
    return {{"variant", to_string(variant)},
            {"patch", {patch.d, patch.h, patch.w}},
            {"channels", channels},
            {"token", token},
            {"embed", embed},
            {"blocks", blocks},
            {"heads", heads},
            {"mlp_hidden", mlp_hidden}};
  }

  void read(ConfigReader& r) {
    std::string v = to_string(variant);
    if (r.get("variant", v)) {
      if (v == "vit") variant = BackboneVariant::vit;
      else if (v == "unet_noskip") variant = BackboneVariant::unet_noskip;
      else r.check(false, "variant", "must be 'unet_noskip' or 'vit'");
    }
    std::array<int, 3> p{patch.d, patch.h, patch.w};
    if (r.get("patch", p)) patch = {p[0], p[1], p[2]};
    r.get("channels", channels);
    r.get("token", token);
    r.get("embed", embed);
    r.get("blocks", blocks);
    r.get("heads", heads);
    r.get("mlp_hidden", mlp_hidden);
    r.finish();
  }

  static BackboneConfig from_json(const nlohmann::json& j) {
    std::vector<std::string> errors;
    BackboneConfig c;
    {
      ConfigReader r(j, "backbone", errors);
      c.read(r);
    }
    throw_if_errors(errors, "backbone config");
    return c;
  }

  bool operator==(const BackboneConfig&) const = default;
};

enum class ConvKind { conv3, down2, up2 };

struct ConvOp {
  ConvKind kind;
  int cin, cout;
  Shape3 in_shape, out_shape;
  std::size_t w, b;
  int level;  // pyramid level produced by this op, or -1
};

inline void add_backbone_params(ParamLayout& L, const BackboneConfig& cfg, const std::string& pre = "backbone.") {
  cfg.validate();
  const int N = cfg.levels();
  const auto& ch = cfg.channels;
  auto conv3 = [&](const std::string& n, int cin, int cout) {
    L.add(pre + n + ".w", {cout, cin, 3, 3, 3}, Init::he_normal, cin * 27);
    L.add(pre + n + ".b", {cout}, Init::zeros);
  };
  int bottleneck = 0;
  if (cfg.variant == BackboneVariant::unet_noskip) {
    conv3("enc0", 1, ch[0]);
    for (int j = 1; j < N; ++j) {
      L.add(pre + "down" + std::to_string(j) + ".w", {ch[j], ch[j - 1], 2, 2, 2}, Init::he_normal, ch[j - 1] * 8);
      L.add(pre + "down" + std::to_string(j) + ".b", {ch[j]}, Init::zeros);
      conv3("enc" + std::to_string(j), ch[j], ch[j]);
    }
    bottleneck = ch[N - 1];
  } else {
    add_vit_params(L, pre + "vit.", cfg.vit_dims());
    bottleneck = cfg.embed;
  }
  conv3("dec0", bottleneck, cfg.level_channels(0));
  for (int j = 1; j < N; ++j) {
    const int cin = cfg.level_channels(j - 1), cout = cfg.level_channels(j);
    L.add(pre + "up" + std::to_string(j) + ".w", {cin, cout, 2, 2, 2}, Init::he_normal, cin);
    L.add(pre + "up" + std::to_string(j) + ".b", {cout}, Init::zeros);
    conv3("dec" + std::to_string(j), cout, cout);
  }
}

/// 1x1x1 projection head over the full-resolution level.
inline void add_head_params(ParamLayout& L, const std::string& name, int cin, int cout) {
  L.add(name + ".w", {cout, cin}, Init::fan_in_normal, cin);
  L.add(name + ".b", {cout}, Init::zeros);
}

template <class T>
struct BackboneCache {
  Tensor<T> input;
  std::vector<Tensor<T>> pre;  // pre-activation of every conv op
  std::vector<Tensor<T>> act;  // post-GELU output of every conv op
  Tensor<T> vit_out;
  VitCache<T> vit;
};

/// Shared-weight encoder-decoder without skip connections: the only path from the encoder
/// to the decoder is the bottleneck tensor.
template <class T>
class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, const ParamLayout& L, const std::string& pre = "backbone.") : cfg_(cfg) {
    cfg.validate();
    const int N = cfg.levels();
    const auto& ch = cfg.channels;
    auto conv = [&](ConvKind k, const std::string& n, int cin, int cout, Shape3 in, Shape3 out, int level) {
      ops_.push_back({k, cin, cout, in, out, L.offset(pre + n + ".w"), L.offset(pre + n + ".b"), level});
    };
    const Shape3 full = cfg.patch;
    auto scaled = [&](int stage) {
      const int f = 1 << stage;
      return Shape3{full.d / f, full.h / f, full.w / f};
    };
    int bottleneck = 0;
    if (cfg.variant == BackboneVariant::unet_noskip) {
      conv(ConvKind::conv3, "enc0", 1, ch[0], full, full, -1);
      for (int j = 1; j < N; ++j) {
        conv(ConvKind::down2, "down" + std::to_string(j), ch[j - 1], ch[j], scaled(j - 1), scaled(j), -1);
        conv(ConvKind::conv3, "enc" + std::to_string(j), ch[j], ch[j], scaled(j), scaled(j), -1);
      }
      bottleneck = ch[N - 1];
    } else {
      vit_ = VitEncoder<T>(cfg.vit_dims(), L, pre + "vit.");
      bottleneck = cfg.embed;
    }
    decoder_begin_ = ops_.size();
    conv(ConvKind::conv3, "dec0", bottleneck, cfg.level_channels(0), cfg.level_shape(0), cfg.level_shape(0), 0);
    for (int j = 1; j < N; ++j) {
      conv(ConvKind::up2, "up" + std::to_string(j), cfg.level_channels(j - 1), cfg.level_channels(j),
           cfg.level_shape(j - 1), cfg.level_shape(j), -1);
      conv(ConvKind::conv3, "dec" + std::to_string(j), cfg.level_channels(j), cfg.level_channels(j),
           cfg.level_shape(j), cfg.level_shape(j), j);
    }
  }

  const BackboneConfig& config() const noexcept { return cfg_; }
  std::size_t decoder_begin() const noexcept { return decoder_begin_; }

  /// Returns the decoder pyramid w^1..w^N (deepest first). Activations are kept in `cache`.
  std::vector<Tensor<T>> forward(const T* prm, const Tensor<T>& x, BackboneCache<T>& cache) const {
    require(x.c == 1 && x.s == cfg_.patch, ErrorKind::config,
            "backbone input " + x.s.str() + " does not match configured patch " + cfg_.patch.str());
    cache.input = x;
    cache.pre.assign(ops_.size(), {});
    cache.act.assign(ops_.size(), {});
    const Tensor<T>* cur = &cache.input;
    if (cfg_.variant == BackboneVariant::vit) {
      cache.vit_out = vit_.forward(prm, x, cache.vit);
      cur = &cache.vit_out;
    }
    std::vector<Tensor<T>> levels(static_cast<std::size_t>(cfg_.levels()));
    for (std::size_t i = 0; i < ops_.size(); ++i) {
      const ConvOp& op = ops_[i];
      Tensor<T>& z = cache.pre[i];
      z = Tensor<T>(op.cout, op.out_shape);
      switch (op.kind) {
        case ConvKind::conv3:
          kernels::conv3_forward(cur->v.data(), op.cin, op.in_shape, prm + op.w, prm + op.b, op.cout, z.v.data());
          break;
        case ConvKind::down2:
          kernels::down2_forward(cur->v.data(), op.cin, op.out_shape, prm + op.w, prm + op.b, op.cout, z.v.data());
          break;
        case ConvKind::up2:
          kernels::up2_forward(cur->v.data(), op.cin, op.in_shape, prm + op.w, prm + op.b, op.cout, z.v.data());
          break;
      }
      Tensor<T>& a = cache.act[i];
      a = Tensor<T>(op.cout, op.out_shape);
      for (std::size_t k = 0; k < z.v.size(); ++k) a.v[k] = kernels::gelu(z.v[k]);
      if (op.level >= 0) levels[static_cast<std::size_t>(op.level)] = a;
      cur = &a;
    }
    return levels;
  }

  /// Back-propagates per-level gradients (empty tensors mean zero). Parameter gradients are
  /// accumulated into `gp`; the input gradient is accumulated into `grad_x` when non-null.
  void backward(const T* prm, const BackboneCache<T>& cache, const std::vector<Tensor<T>>& level_grads, T* gp,
                Tensor<T>* grad_x) const {
    Tensor<T> g(ops_.back().cout, ops_.back().out_shape);
    for (std::size_t i = ops_.size(); i-- > 0;) {
      const ConvOp& op = ops_[i];
      if (op.level >= 0 && static_cast<std::size_t>(op.level) < level_grads.size() &&
          !level_grads[static_cast<std::size_t>(op.level)].empty())
        g += level_grads[static_cast<std::size_t>(op.level)];
      const Tensor<T>& z = cache.pre[i];
      for (std::size_t k = 0; k < g.v.size(); ++k) g.v[k] *= kernels::gelu_grad(z.v[k]);
      const Tensor<T>* in = i > 0 ? &cache.act[i - 1]
                                  : (cfg_.variant == BackboneVariant::vit ? &cache.vit_out : &cache.input);
      const bool need_in = i > 0 || cfg_.variant == BackboneVariant::vit || grad_x != nullptr;
      Tensor<T> gin;
      if (need_in) gin = Tensor<T>(op.cin, op.in_shape);
      T* gin_ptr = need_in ? gin.v.data() : nullptr;
      switch (op.kind) {
        case ConvKind::conv3:
          kernels::conv3_backward(in->v.data(), op.cin, op.in_shape, prm + op.w, op.cout, g.v.data(), gin_ptr,
                                  gp + op.w, gp + op.b);
          break;
        case ConvKind::down2:
          kernels::down2_backward(in->v.data(), op.cin, op.out_shape, prm + op.w, op.cout, g.v.data(), gin_ptr,
                                  gp + op.w, gp + op.b);
          break;
        case ConvKind::up2:
          kernels::up2_backward(in->v.data(), op.cin, op.in_shape, prm + op.w, op.cout, g.v.data(), gin_ptr,
                                gp + op.w, gp + op.b);
          break;
      }
      g = std::move(gin);
    }
    if (cfg_.variant == BackboneVariant::vit) {
      vit_.backward(prm, cache.vit, g, gp, grad_x);
    } else if (grad_x) {
      *grad_x += g;
    }
  }

 private:
  BackboneConfig cfg_;
  std::vector<ConvOp> ops_;
  std::size_t decoder_begin_ = 0;
  VitEncoder<T> vit_;
};

/// Pointwise projection with logistic output: recon (1 channel) or affinities (3 channels).
template <class T>
class SigmoidHead {
 public:
  SigmoidHead(const ParamLayout& L, const std::string& name) {
    const auto& e = L.at(name + ".w");
    cout_ = e.shape[0];
    cin_ = e.shape[1];
    w_ = e.offset;
    b_ = L.offset(name + ".b");
  }

  int out_channels() const noexcept { return cout_; }

  /// Logits; apply kernels::sigmoid for probabilities.
  Tensor<T> logits(const T* prm, const Tensor<T>& feat) const {
    Tensor<T> z(cout_, feat.s);
    kernels::pointwise_forward(feat.v.data(), cin_, feat.plane(), prm + w_, prm + b_, cout_, z.v.data());
    return z;
  }

  Tensor<T> forward(const T* prm, const Tensor<T>& feat) const {
    Tensor<T> p = logits(prm, feat);
    for (T& v : p.v) v = kernels::sigmoid(v);
    return p;
  }

  /// Gradient w.r.t. logits in, gradient w.r.t. features accumulated into grad_feat.
  void backward(const T* prm, const Tensor<T>& feat, const Tensor<T>& grad_logits, T* gp, Tensor<T>& grad_feat) const {
    if (grad_feat.empty()) grad_feat = Tensor<T>(cin_, feat.s);
    kernels::pointwise_backward(feat.v.data(), cin_, feat.plane(), prm + w_, cout_, grad_logits.v.data(),
                                grad_feat.v.data(), gp + w_, gp + b_);
  }

 private:
  int cin_ = 0, cout_ = 0;
  std::size_t w_ = 0, b_ = 0;
};

}  // namespace emc
