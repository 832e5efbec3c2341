#pragma once

// Affinity finetuning on labeled patches and sliding-window affinity inference.

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emconsist/core/config_reader.hpp"
#include "emconsist/core/dataset.hpp"
#include "emconsist/core/parallel.hpp"
#include "emconsist/nn/backbone.hpp"
#include "emconsist/nn/checkpoint.hpp"
#include "emconsist/seg/affinity.hpp"
#include "emconsist/train/adam.hpp"
#include "emconsist/train/pretrain.hpp"

namespace emc {

struct FinetuneConfig {
  int iterations = 500;
  int batch_size = 2;
  std::uint64_t seed = 0;
  bool flips = true;  // random axis flips applied to image and labels alike
  std::string manifest;
  std::string pretrained;  // checkpoint path; empty trains from random initialization
  AdamConfig optimizer;
  BackboneConfig backbone;

  void validate() const {
    require(iterations >= 0, ErrorKind::validation, "iterations must be >= 0");
    require(batch_size >= 1, ErrorKind::validation, "batch_size must be >= 1");
    optimizer.validate();
    backbone.validate();
  }

  nlohmann::json to_json() const {
    return {{"iterations", iterations}, {"batch_size", batch_size},        {"seed", seed},
            {"flips", flips},           {"manifest", manifest},            {"pretrained", pretrained},
            {"optimizer", optimizer.to_json()}, {"backbone", backbone.to_json()}};
  }

  void read(ConfigReader& r) {
    r.get("iterations", iterations);
    r.get("batch_size", batch_size);
    r.get("seed", seed);
    r.get("flips", flips);
    r.get("manifest", manifest);
    r.get("pretrained", pretrained);
    r.check(iterations >= 0, "iterations", "must be >= 0");
    r.check(batch_size >= 1, "batch_size", "must be >= 1");
    {
      ConfigReader c = r.child("optimizer");
      optimizer.read(c);
    }
    {
      ConfigReader c = r.child("backbone");
      backbone.read(c);
    }
    r.finish();
  }

  static FinetuneConfig from_json(const nlohmann::json& j) {
    std::vector<std::string> errors;
    FinetuneConfig c;
    {
      ConfigReader r(j, "", errors);
      c.read(r);
    }
    throw_if_errors(errors, "finetune config");
    c.validate();
    return c;
  }
};

inline ParamLayout segmentation_layout(const BackboneConfig& bb) {
  ParamLayout L;
  add_backbone_params(L, bb);
  add_head_params(L, "aff", bb.level_channels(bb.levels() - 1), 3);
  return L;
}

/// Mean binary cross-entropy between affinity logits and targets over valid (non-border)
/// entries. Accumulates scale * dL/dlogits into grad when non-null.
template <class T>
double affinity_bce(const Tensor<T>& logits, const AffinityMap& target, double scale = 1.0, Tensor<T>* grad = nullptr) {
  require(logits.c == 3 && logits.s == target.shape, ErrorKind::validation, "affinity logits/target shape mismatch");
  const Shape3 s = target.shape;
  std::size_t valid = 0;
  for (int a = 0; a < 3; ++a) valid += static_cast<std::size_t>(s.size() - s.size() / static_cast<std::size_t>(s[a]));
  double total = 0.0;
  const double inv = 1.0 / static_cast<double>(valid);
  for (int a = 0; a < 3; ++a)
    for (int z = 0; z < s.d; ++z)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          if (!has_lower({z, y, x}, a)) continue;
          const std::size_t i = static_cast<std::size_t>(a) * s.size() + s.index(z, y, x);
          const double zl = logits.v[i], t = target.values[i];
          total += kernels::softplus(zl) - t * zl;
          if (grad) grad->v[i] += static_cast<T>(scale * inv * (kernels::sigmoid(zl) - t));
        }
  return total * inv;
}

namespace detail {

template <class V>
void flip_axis(V& vol, int axis) {
  const Shape3 s = vol.shape;
  auto src = vol.voxels;
  for (int z = 0; z < s.d; ++z)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        Index3 p{z, y, x};
        p[static_cast<std::size_t>(axis)] = s[axis] - 1 - p[static_cast<std::size_t>(axis)];
        vol.voxels[s.index(z, y, x)] = src[s.index(p[0], p[1], p[2])];
      }
}

}  // namespace detail

class Finetuner {
 public:
  Finetuner(FinetuneConfig cfg, Dataset data, const std::optional<Checkpoint>& pretrained)
      : cfg_(std::move(cfg)), data_(std::move(data)), layout_(segmentation_layout(cfg_.backbone)),
        backbone_(cfg_.backbone, layout_), head_(layout_, "aff"), adam_(layout_.total()) {
    cfg_.validate();
    require(data_.has_labels(), ErrorKind::config, "finetuning needs a labeled dataset");
    require(data_.patch_shape() == cfg_.backbone.patch, ErrorKind::config,
            "dataset patch shape " + data_.patch_shape().str() + " differs from backbone patch " +
                cfg_.backbone.patch.str());
    params_.layout = layout_;
    params_.values = init_parameters<float>(layout_, cfg_.seed).values;
    if (pretrained) transferred_ = transfer_parameters(pretrained->params, params_, "backbone.");
  }

  const ParameterSet<float>& params() const noexcept { return params_; }
  std::uint64_t step() const noexcept { return adam_.step; }
  std::size_t transferred() const noexcept { return transferred_; }

  std::vector<LabeledPatch> make_batch(std::uint64_t k) const {
    std::vector<LabeledPatch> out(static_cast<std::size_t>(cfg_.batch_size));
    parallel_for(cfg_.batch_size, [&](int b) {
      Rng rng = make_stream({cfg_.seed, k, static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(StreamTag::finetune)});
      LabeledPatch p = data_.sample_labeled(rng);
      if (cfg_.flips)
        for (int a = 0; a < 3; ++a)
          if (bernoulli(rng, 0.5)) {
            detail::flip_axis(p.patch, a);
            detail::flip_axis(p.labels, a);
          }
      out[b] = std::move(p);
    });
    return out;
  }

  /// Mean BCE of the batch for step k (1-based) and, optionally, its gradient.
  double loss(const std::vector<LabeledPatch>& batch, std::vector<float>* grad) const {
    const int B = static_cast<int>(batch.size());
    std::vector<double> losses(static_cast<std::size_t>(B));
    std::vector<std::vector<float>> grads(static_cast<std::size_t>(B));
    const float* prm = params_.values.data();
    parallel_for(B, [&](int b) {
      BackboneCache<float> cache;
      auto levels = backbone_.forward(prm, to_tensor<float>(batch[b].patch), cache);
      Tensor<float> logits = head_.logits(prm, levels.back());
      const AffinityMap target = labels_to_affinities(batch[b].labels);
      if (!grad) {
        losses[b] = affinity_bce(logits, target);
        return;
      }
      grads[b].assign(params_.values.size(), 0.0f);
      Tensor<float> gl(3, logits.s);
      losses[b] = affinity_bce(logits, target, 1.0 / B, &gl);
      std::vector<Tensor<float>> glevels(levels.size());
      head_.backward(prm, levels.back(), gl, grads[b].data(), glevels.back());
      backbone_.backward(prm, cache, glevels, grads[b].data(), nullptr);
    });
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
      total += losses[b];
      if (grad)
        for (std::size_t i = 0; i < grad->size(); ++i) (*grad)[i] += grads[b][i];
    }
    return total / B;
  }

  double step_once() {
    const std::uint64_t k = adam_.step + 1;
    std::vector<float> grad(params_.values.size(), 0.0f);
    const double l = loss(make_batch(k), &grad);
    if (!std::isfinite(l)) fail(ErrorKind::training, "step " + std::to_string(k) + ": non-finite affinity loss");
    adam_step(params_.values, std::move(grad), adam_, cfg_.optimizer);
    return l;
  }

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.kind = "segmentation";
    c.config = {{"backbone", cfg_.backbone.to_json()}, {"finetune", cfg_.to_json()}};
    c.params = params_;
    c.adam = adam_;
    c.step = adam_.step;
    return c;
  }

 private:
  FinetuneConfig cfg_;
  Dataset data_;
  ParamLayout layout_;
  Backbone<float> backbone_;
  SigmoidHead<float> head_;
  ParameterSet<float> params_;
  AdamState<float> adam_;
  std::size_t transferred_ = 0;
};

/// Window origins along one axis: multiples of stride, with the last window flush to the end.
inline std::vector<int> window_starts(int extent, int patch, int stride) {
  require(extent >= patch, ErrorKind::config,
          "volume extent " + std::to_string(extent) + " is smaller than the patch " + std::to_string(patch));
  require(stride >= 1, ErrorKind::validation, "stride must be >= 1");
  std::vector<int> out;
  for (int o = 0;; o += stride) {
    if (o + patch >= extent) {
      out.push_back(extent - patch);
      break;
    }
    out.push_back(o);
  }
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Affinity prediction from a segmentation checkpoint.
class AffinityPredictor {
 public:
  explicit AffinityPredictor(const Checkpoint& c)
      : cfg_(BackboneConfig::from_json(c.config.at("backbone"))), layout_(segmentation_layout(cfg_)),
        backbone_(cfg_, layout_), head_(layout_, "aff") {
    require(c.kind == "segmentation", ErrorKind::config, "expected a segmentation checkpoint, got '" + c.kind + "'");
    params_.layout = layout_;
    params_.values.assign(layout_.total(), 0.0f);
    transfer_parameters(c.params, params_, "");
  }

  const BackboneConfig& config() const noexcept { return cfg_; }

  Tensor<float> predict_window(const Volume& patch) const {
    BackboneCache<float> cache;
    auto levels = backbone_.forward(params_.values.data(), to_tensor<float>(patch), cache);
    return head_.forward(params_.values.data(), levels.back());
  }

  /// Overlapping windows are averaged; the reduction runs in window order.
  AffinityMap predict(const Volume& volume, int stride) const {
    const Shape3 s = volume.shape, p = cfg_.patch;
    const auto zs = window_starts(s.d, p.d, stride), ys = window_starts(s.h, p.h, stride),
               xs = window_starts(s.w, p.w, stride);
    std::vector<Index3> origins;
    for (int z : zs)
      for (int y : ys)
        for (int x : xs) origins.push_back({z, y, x});
    std::vector<Tensor<float>> outs(origins.size());
    parallel_for(static_cast<int>(origins.size()),
                 [&](int w) { outs[w] = predict_window(crop(volume, origins[w], p)); });
    std::vector<double> sum(3 * s.size(), 0.0);
    std::vector<std::uint32_t> count(s.size(), 0);
    for (std::size_t w = 0; w < origins.size(); ++w) {
      const Index3 o = origins[w];
      for (int z = 0; z < p.d; ++z)
        for (int y = 0; y < p.h; ++y)
          for (int x = 0; x < p.w; ++x) {
            const std::size_t dst = s.index(o[0] + z, o[1] + y, o[2] + x);
            count[dst] += 1;
            for (int a = 0; a < 3; ++a) sum[a * s.size() + dst] += outs[w].at(a, z, y, x);
          }
    }
    AffinityMap aff(s);
    for (int a = 0; a < 3; ++a)
      for (int z = 0; z < s.d; ++z)
        for (int y = 0; y < s.h; ++y)
          for (int x = 0; x < s.w; ++x) {
            const std::size_t i = s.index(z, y, x);
            aff.at(a, i) = has_lower({z, y, x}, a) ? static_cast<float>(sum[a * s.size() + i] / count[i]) : 0.0f;
          }
    return aff;
  }

 private:
  BackboneConfig cfg_;
  ParamLayout layout_;
  Backbone<float> backbone_;
  SigmoidHead<float> head_;
  ParameterSet<float> params_;
};

}  // namespace emc
