#pragma once

// Full pretraining objective: both views go through the shared backbone, and the weighted
// sum of reconstruction, cross-attention InfoNCE and multiscale similarity is differentiated
// with respect to every parameter (and optionally the two input views).

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emconsist/core/config_reader.hpp"
#include "emconsist/core/parallel.hpp"
#include "emconsist/loss/attention.hpp"
#include "emconsist/loss/infonce.hpp"
#include "emconsist/loss/recon.hpp"
#include "emconsist/loss/sim.hpp"
#include "emconsist/loss/tokens.hpp"
#include "emconsist/nn/backbone.hpp"
#include "emconsist/nn/pool.hpp"

namespace emc {

enum class LossTerm { r = 0, cross = 1, sim = 2 };

inline const char* to_string(LossTerm t) {
  switch (t) {
    case LossTerm::r: return "r";
    case LossTerm::cross: return "cross";
    case LossTerm::sim: return "sim";
  }
  return "?";
}

inline std::optional<LossTerm> parse_loss_term(const std::string& s) {
  if (s == "r") return LossTerm::r;
  if (s == "cross") return LossTerm::cross;
  if (s == "sim") return LossTerm::sim;
  return std::nullopt;
}

struct ObjectiveConfig {
  std::array<double, 3> alpha{1.0, 0.1, 0.1};
  double tau = 0.07;
  std::array<bool, 3> enabled{true, true, true};
  bool cross_batch_negatives = false;
  TokenConfig tokens;
  SimConfig sim;

  bool uses(LossTerm t) const { return enabled[static_cast<std::size_t>(t)]; }
  double weight(LossTerm t) const { return alpha[static_cast<std::size_t>(t)]; }

  std::vector<std::string> enabled_names() const {
    std::vector<std::string> out;
    for (LossTerm t : {LossTerm::r, LossTerm::cross, LossTerm::sim})
      if (uses(t)) out.emplace_back(to_string(t));
    return out;
  }

  void set_enabled(const std::vector<std::string>& names) {
    enabled = {false, false, false};
    for (const auto& n : names) {
      auto t = parse_loss_term(n);
      require(t.has_value(), ErrorKind::validation, "unknown loss term '" + n + "' (expected r, cross or sim)");
      enabled[static_cast<std::size_t>(*t)] = true;
    }
  }

  void validate() const {
    require(enabled[0] || enabled[1] || enabled[2], ErrorKind::validation, "at least one loss term must be enabled");
    require(tau > 0.0 && std::isfinite(tau), ErrorKind::validation, "temperature must be positive");
    for (double a : alpha) require(std::isfinite(a), ErrorKind::validation, "loss weights must be finite");
  }

  nlohmann::json to_json() const {
    return {{"alpha", alpha},
            {"tau", tau},
            {"losses", enabled_names()},
            {"cross_batch_negatives", cross_batch_negatives},
            {"tokens", tokens.to_json()},
            {"sim", sim.to_json()}};
  }

  void read(ConfigReader& r) {
    r.get("alpha", alpha);
    r.get("tau", tau);
    std::vector<std::string> names;
    if (r.get("losses", names)) {
      enabled = {false, false, false};
      for (const auto& n : names) {
        if (auto t = parse_loss_term(n)) enabled[static_cast<std::size_t>(*t)] = true;
        else r.check(false, "losses", "contains unknown term '" + n + "'");
      }
      r.check(!names.empty(), "losses", "must name at least one term");
    }
    r.get("cross_batch_negatives", cross_batch_negatives);
    r.check(tau > 0.0, "tau", "must be > 0");
    {
      ConfigReader c = r.child("tokens");
      tokens.read(c);
    }
    {
      ConfigReader c = r.child("sim");
      sim.read(c);
    }
    r.finish();
  }

  bool operator==(const ObjectiveConfig&) const = default;
};

/// Per-term losses; a disabled term is absent rather than zero.
struct LossBreakdown {
  std::optional<double> l_r, l_cross, l_sim;
  double l_total = 0.0;
  std::array<double, 3> alpha{1.0, 0.1, 0.1};

  nlohmann::json to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"l_r", opt(l_r)}, {"l_cross", opt(l_cross)}, {"l_sim", opt(l_sim)}, {"l_total", l_total}};
  }
};

/// Weighted sum in double precision; a non-finite term is a training error naming it.
inline LossBreakdown combine_losses(std::optional<double> l_r, std::optional<double> l_cross,
                                    std::optional<double> l_sim, const std::array<double, 3>& alpha) {
  LossBreakdown out;
  out.l_r = l_r;
  out.l_cross = l_cross;
  out.l_sim = l_sim;
  out.alpha = alpha;
  const std::array<std::pair<const char*, const std::optional<double>*>, 3> terms{
      {{"l_r", &out.l_r}, {"l_cross", &out.l_cross}, {"l_sim", &out.l_sim}}};
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const auto& [name, v] = terms[i];
    if (!v->has_value()) continue;
    if (!std::isfinite(**v)) fail(ErrorKind::training, std::string("non-finite loss term ") + name);
    out.l_total += alpha[i] * **v;
  }
  if (!std::isfinite(out.l_total)) fail(ErrorKind::training, "non-finite loss term l_total");
  return out;
}

inline std::vector<int> pyramid_channels(const BackboneConfig& cfg) {
  std::vector<int> out;
  for (int j = 0; j < cfg.levels(); ++j) out.push_back(cfg.level_channels(j));
  return out;
}

/// Parameter layout of the pretraining model: backbone, reconstruction head and all loss heads.
inline ParamLayout pretrain_layout(const BackboneConfig& bb, const ObjectiveConfig& obj) {
  ParamLayout L;
  add_backbone_params(L, bb);
  add_head_params(L, "recon", bb.level_channels(bb.levels() - 1), 1);
  add_token_params(L, pyramid_channels(bb), obj.tokens);
  add_attention_params(L, obj.tokens.dim);
  add_sim_params(L, bb.levels(), obj.sim);
  return L;
}

template <class T>
struct FeaturePyramid {
  std::vector<Tensor<T>> levels;  // deepest first; the last one is full resolution
  Tensor<T> recon;
};

/// Weak views, strong views and the untouched originals of one batch.
template <class T>
struct SiameseBatch {
  std::vector<Tensor<T>> weak, strong, original;
  std::size_t size() const noexcept { return original.size(); }
};

template <class T>
class SiameseObjective {
 public:
  SiameseObjective(const BackboneConfig& bb, const ObjectiveConfig& obj, const ParamLayout& L)
      : bb_cfg_(bb), obj_(obj), backbone_(bb, L), recon_(L, "recon"), tokens_(L, bb.levels()), attn_(L),
        sim_(L, obj.sim) {
    obj.validate();
  }

  const BackboneConfig& backbone_config() const noexcept { return bb_cfg_; }
  const ObjectiveConfig& config() const noexcept { return obj_; }
  std::vector<int> level_channels() const { return pyramid_channels(bb_cfg_); }

  FeaturePyramid<T> pyramid(const T* prm, const Tensor<T>& x) const {
    BackboneCache<T> cache;
    FeaturePyramid<T> p;
    p.levels = backbone_.forward(prm, x, cache);
    p.recon = recon_.forward(prm, p.levels.back());
    return p;
  }

  /// Loss of one batch. `channels` is the per-level channel choice of the similarity term.
  /// With `grad` non-null, the gradient of l_total is accumulated into it (sized to the
  /// layout); grad_weak / grad_strong receive input gradients when non-null.
  LossBreakdown evaluate(const T* prm, const SiameseBatch<T>& batch, const std::vector<int>& channels,
                         std::vector<T>* grad = nullptr, std::vector<Tensor<T>>* grad_weak = nullptr,
                         std::vector<Tensor<T>>* grad_strong = nullptr) const {
    const int B = static_cast<int>(batch.size());
    require(B >= 1 && batch.weak.size() == batch.size() && batch.strong.size() == batch.size(), ErrorKind::validation,
            "batch views must have equal, non-zero size");
    const int N = bb_cfg_.levels();
    const int tasks = 2 * B;  // task t: sample t / 2, weak view if t is even
    auto view = [&](int t) -> const Tensor<T>& { return t % 2 == 0 ? batch.weak[t / 2] : batch.strong[t / 2]; };

    std::vector<BackboneCache<T>> caches(static_cast<std::size_t>(tasks));
    std::vector<std::vector<Tensor<T>>> levels(static_cast<std::size_t>(tasks)), pooled(static_cast<std::size_t>(tasks));
    std::vector<Tensor<T>> recon(static_cast<std::size_t>(tasks));
    const bool need_pool = obj_.uses(LossTerm::cross) || obj_.uses(LossTerm::sim);
    parallel_for(tasks, [&](int t) {
      levels[t] = backbone_.forward(prm, view(t), caches[t]);
      if (obj_.uses(LossTerm::r)) recon[t] = recon_.forward(prm, levels[t].back());
      if (need_pool) pooled[t] = pool_pyramid(levels[t]);
    });

    T* gp = grad ? grad->data() : nullptr;
    std::vector<std::vector<Tensor<T>>> grad_levels(static_cast<std::size_t>(tasks), std::vector<Tensor<T>>(N));
    std::vector<std::vector<Tensor<T>>> grad_pooled(static_cast<std::size_t>(tasks));

    std::optional<double> l_r, l_cross, l_sim;
    if (obj_.uses(LossTerm::r)) {
      std::vector<Tensor<T>> rw, rs;
      for (int b = 0; b < B; ++b) {
        rw.push_back(recon[2 * b]);
        rs.push_back(recon[2 * b + 1]);
      }
      l_r = recon_loss(rw, rs, batch.original);
      if (grad) {
        std::vector<Tensor<T>> gw, gs;
        recon_loss_backward(rw, rs, batch.original, obj_.weight(LossTerm::r), gw, gs);
        for (int t = 0; t < tasks; ++t) {
          Tensor<T>& g = t % 2 == 0 ? gw[t / 2] : gs[t / 2];
          for (std::size_t k = 0; k < g.v.size(); ++k) g.v[k] *= recon[t].v[k] * (T(1) - recon[t].v[k]);
          recon_.backward(prm, levels[t].back(), g, gp, grad_levels[t][N - 1]);
        }
      }
    }

    if (obj_.uses(LossTerm::cross)) {
      std::vector<TokenCache<T>> tcache(static_cast<std::size_t>(tasks));
      std::vector<std::vector<T>> tok(static_cast<std::size_t>(tasks));
      for (int t = 0; t < tasks; ++t) tok[t] = tokens_.forward(prm, pooled[t], tcache[t]);
      std::vector<AttendedTokens<T>> att;
      std::vector<std::vector<T>> ms, ns;
      for (int b = 0; b < B; ++b) {
        att.push_back(attn_.forward(prm, tok[2 * b], tok[2 * b + 1]));
        ms.push_back(att.back().m);
        ns.push_back(att.back().n);
      }
      std::vector<std::vector<T>> dms, dns;
      l_cross = infonce_loss(ms, ns, attn_.dim(), obj_.tau, obj_.cross_batch_negatives, obj_.weight(LossTerm::cross),
                             grad ? &dms : nullptr, grad ? &dns : nullptr);
      if (grad) {
        for (int b = 0; b < B; ++b) {
          std::vector<T> dtw, dts;
          attn_.backward(prm, tok[2 * b], tok[2 * b + 1], att[b], dms[b], dns[b], gp, dtw, dts);
          tokens_.backward(prm, pooled[2 * b], tcache[2 * b], dtw, gp, grad_pooled[2 * b]);
          tokens_.backward(prm, pooled[2 * b + 1], tcache[2 * b + 1], dts, gp, grad_pooled[2 * b + 1]);
        }
      }
    }

    if (obj_.uses(LossTerm::sim)) {
      std::vector<std::vector<Tensor<T>>> pw, ps;
      for (int b = 0; b < B; ++b) {
        pw.push_back(pooled[2 * b]);
        ps.push_back(pooled[2 * b + 1]);
      }
      if (grad) {
        std::vector<std::vector<Tensor<T>>> gw(static_cast<std::size_t>(B)), gs(static_cast<std::size_t>(B));
        l_sim = sim_(prm, pw, ps, channels, obj_.weight(LossTerm::sim), gp, &gw, &gs);
        for (int b = 0; b < B; ++b) {
          accumulate(grad_pooled[2 * b], gw[b]);
          accumulate(grad_pooled[2 * b + 1], gs[b]);
        }
      } else {
        l_sim = sim_(prm, pw, ps, channels);
      }
    }

    LossBreakdown out = combine_losses(l_r, l_cross, l_sim, obj_.alpha);
    if (!grad) return out;

    for (int t = 0; t < tasks; ++t)
      for (std::size_t j = 0; j < grad_pooled[t].size(); ++j) {
        if (grad_pooled[t][j].empty()) continue;
        Tensor<T> g = adaptive_pool_backward(grad_pooled[t][j], levels[t][j].s);
        if (grad_levels[t][j].empty()) grad_levels[t][j] = std::move(g);
        else grad_levels[t][j] += g;
      }

    // Each task owns a gradient buffer; buffers are reduced in task order.
    std::vector<std::vector<T>> task_grad(static_cast<std::size_t>(tasks));
    std::vector<Tensor<T>> task_gx(static_cast<std::size_t>(tasks));
    const bool want_x = grad_weak || grad_strong;
    parallel_for(tasks, [&](int t) {
      task_grad[t].assign(grad->size(), T(0));
      if (want_x) task_gx[t] = Tensor<T>(1, bb_cfg_.patch);
      backbone_.backward(prm, caches[t], grad_levels[t], task_grad[t].data(), want_x ? &task_gx[t] : nullptr);
    });
    for (int t = 0; t < tasks; ++t)
      for (std::size_t k = 0; k < grad->size(); ++k) (*grad)[k] += task_grad[t][k];
    if (grad_weak) {
      grad_weak->resize(static_cast<std::size_t>(B));
      for (int b = 0; b < B; ++b) (*grad_weak)[b] = task_gx[2 * b];
    }
    if (grad_strong) {
      grad_strong->resize(static_cast<std::size_t>(B));
      for (int b = 0; b < B; ++b) (*grad_strong)[b] = task_gx[2 * b + 1];
    }
    return out;
  }

 private:
  static void accumulate(std::vector<Tensor<T>>& dst, std::vector<Tensor<T>>& src) {
    dst.resize(src.size());
    for (std::size_t j = 0; j < src.size(); ++j) {
      if (src[j].empty()) continue;
      if (dst[j].empty()) dst[j] = std::move(src[j]);
      else dst[j] += src[j];
    }
  }

  BackboneConfig bb_cfg_;
  ObjectiveConfig obj_;
  Backbone<T> backbone_;
  SigmoidHead<T> recon_;
  TokenProjector<T> tokens_;
  CrossAttention<T> attn_;
  SimLoss<T> sim_;
};

}  // namespace emc
