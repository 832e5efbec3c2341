#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emconsist/augment/transforms.hpp"
#include "emconsist/core/config_reader.hpp"

namespace emc {

/// Mild rigid-ish transforms: integer translation, 90-degree rotations, nearest-neighbour
/// zoom and flips. No intensity interpolation is ever performed on the weak branch.
struct WeakAugmentSpec {
  int translation = 3;                             // max |shift| per axis, voxels
  std::array<bool, 3> rotation_axes{true, true, true};
  double scale_min = 0.9;
  double scale_max = 1.1;
  std::array<bool, 3> flip_axes{true, true, true};
  double p_translate = 0.5;
  double p_rotate = 0.25;
  double p_scale = 0.25;
  double p_flip = 0.25;  // per axis

  static WeakAugmentSpec identity() {
    WeakAugmentSpec s;
    s.translation = 0;
    s.rotation_axes = {false, false, false};
    s.scale_min = s.scale_max = 1.0;
    s.flip_axes = {false, false, false};
    return s;
  }

  void validate(const Shape3& patch) const {
    require(scale_min > 0.0 && scale_max >= scale_min, ErrorKind::validation, "weak scale range must be positive");
    require(translation >= 0 && translation < std::min({patch.d, patch.h, patch.w}), ErrorKind::validation,
            "weak translation range must be smaller than the patch extent");
    for (double p : {p_translate, p_rotate, p_scale, p_flip})
      require(p >= 0.0 && p <= 1.0, ErrorKind::validation, "weak augmentation probabilities must be in [0,1]");
  }

  void read(ConfigReader& r) {
    r.get("translation", translation);
    r.get("rotation_axes", rotation_axes);
    r.get("scale_min", scale_min);
    r.get("scale_max", scale_max);
    r.get("flip_axes", flip_axes);
    r.get("p_translate", p_translate);
    r.get("p_rotate", p_rotate);
    r.get("p_scale", p_scale);
    r.get("p_flip", p_flip);
    r.finish();
  }

  nlohmann::json to_json() const {
    return {{"translation", translation}, {"rotation_axes", rotation_axes}, {"scale_min", scale_min},
            {"scale_max", scale_max},     {"flip_axes", flip_axes},         {"p_translate", p_translate},
            {"p_rotate", p_rotate},       {"p_scale", p_scale},             {"p_flip", p_flip}};
  }
};

/// Heavy perturbations. Order of application: elastic, crop-resize, scale (geometric),
/// gamma, noise (photometric), splice, mask (occlusion).
struct StrongAugmentSpec {
  int elastic_spacing = 8;
  double elastic_sigma = 2.0;
  double crop_min = 0.7;  // crop extent as a fraction of the patch
  double crop_max = 1.0;
  double scale_min = 0.85;
  double scale_max = 1.15;
  double gamma_min = 0.6;
  double gamma_max = 1.6;
  double noise_sigma = 0.1;
  double splice_fraction = 0.125;  // volume fraction of the transplanted block
  double mask_ratio = 0.5;
  int mask_block = 8;
  double p_elastic = 0.8;
  double p_crop = 0.5;
  double p_scale = 0.5;
  double p_gamma = 0.8;
  double p_noise = 0.8;
  double p_splice = 0.5;
  double p_mask = 0.8;

  static StrongAugmentSpec identity() {
    StrongAugmentSpec s;
    s.p_elastic = s.p_crop = s.p_scale = s.p_gamma = s.p_noise = s.p_splice = s.p_mask = 0.0;
    return s;
  }

  void validate() const {
    require(elastic_spacing >= 1 && elastic_sigma >= 0.0, ErrorKind::validation, "invalid elastic parameters");
    require(crop_min > 0.0 && crop_max <= 1.0 && crop_min <= crop_max, ErrorKind::validation,
            "crop range must satisfy 0 < min <= max <= 1");
    require(scale_min > 0.0 && scale_max >= scale_min, ErrorKind::validation, "strong scale range must be positive");
    require(gamma_min > 0.0 && gamma_max >= gamma_min && std::isfinite(gamma_max), ErrorKind::validation,
            "gamma range must lie in (0, inf)");
    require(noise_sigma >= 0.0, ErrorKind::validation, "noise sigma must be non-negative");
    require(splice_fraction >= 0.0 && splice_fraction <= 1.0, ErrorKind::validation,
            "splice fraction must be in [0,1]");
    require(mask_ratio >= 0.0 && mask_ratio <= 0.8, ErrorKind::validation, "mask ratio must be in [0, 0.8]");
    require(mask_block >= 1, ErrorKind::validation, "mask block must be positive");
    for (double p : {p_elastic, p_crop, p_scale, p_gamma, p_noise, p_splice, p_mask})
      require(p >= 0.0 && p <= 1.0, ErrorKind::validation, "strong augmentation probabilities must be in [0,1]");
  }

  void read(ConfigReader& r) {
    r.get("elastic_spacing", elastic_spacing);
    r.get("elastic_sigma", elastic_sigma);
    r.get("crop_min", crop_min);
    r.get("crop_max", crop_max);
    r.get("scale_min", scale_min);
    r.get("scale_max", scale_max);
    r.get("gamma_min", gamma_min);
    r.get("gamma_max", gamma_max);
    r.get("noise_sigma", noise_sigma);
    r.get("splice_fraction", splice_fraction);
    r.get("mask_ratio", mask_ratio);
    r.get("mask_block", mask_block);
    r.get("p_elastic", p_elastic);
    r.get("p_crop", p_crop);
    r.get("p_scale", p_scale);
    r.get("p_gamma", p_gamma);
    r.get("p_noise", p_noise);
    r.get("p_splice", p_splice);
    r.get("p_mask", p_mask);
    r.finish();
  }

  nlohmann::json to_json() const {
    return {{"elastic_spacing", elastic_spacing}, {"elastic_sigma", elastic_sigma}, {"crop_min", crop_min},
            {"crop_max", crop_max},               {"scale_min", scale_min},         {"scale_max", scale_max},
            {"gamma_min", gamma_min},             {"gamma_max", gamma_max},         {"noise_sigma", noise_sigma},
            {"splice_fraction", splice_fraction}, {"mask_ratio", mask_ratio},       {"mask_block", mask_block},
            {"p_elastic", p_elastic},             {"p_crop", p_crop},               {"p_scale", p_scale},
            {"p_gamma", p_gamma},                 {"p_noise", p_noise},             {"p_splice", p_splice},
            {"p_mask", p_mask}};
  }
};

struct TransformStep {
  std::string kind;
  nlohmann::json params;
  bool operator==(const TransformStep&) const = default;
};

/// Ordered list of applied transforms with their sampled parameters.
struct TransformRecord {
  std::vector<TransformStep> steps;

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : steps) j.push_back({{"kind", s.kind}, {"params", s.params}});
    return j;
  }
  static TransformRecord from_json(const nlohmann::json& j) {
    TransformRecord r;
    for (const auto& s : j) r.steps.push_back({s.at("kind").get<std::string>(), s.at("params")});
    return r;
  }
  bool operator==(const TransformRecord&) const = default;
};

inline Volume apply_step(const Volume& in, const TransformStep& step) {
  const auto& p = step.params;
  auto idx3 = [](const nlohmann::json& a) { return Index3{a.at(0).get<int>(), a.at(1).get<int>(), a.at(2).get<int>()}; };
  if (step.kind == "translate") return xform::translate(in, idx3(p.at("shift")));
  if (step.kind == "rotate90") return xform::rotate90(in, p.at("axis").get<int>(), p.at("k").get<int>());
  if (step.kind == "flip") return xform::flip(in, p.at("axis").get<int>());
  if (step.kind == "zoom") return xform::zoom(in, p.at("factor").get<double>(), p.at("linear").get<bool>());
  if (step.kind == "elastic")
    return xform::elastic(in, p.at("spacing").get<int>(), p.at("displacements").get<std::vector<double>>());
  if (step.kind == "crop_resize") {
    const Index3 e = idx3(p.at("extent"));
    return xform::crop_resize(in, idx3(p.at("origin")), Shape3{e[0], e[1], e[2]});
  }
  if (step.kind == "gamma") return xform::gamma(in, p.at("gamma").get<double>());
  if (step.kind == "noise")
    return xform::gaussian_noise(in, p.at("sigma").get<double>(), p.at("seed").get<std::uint64_t>());
  if (step.kind == "splice") {
    const Index3 sz = idx3(p.at("size"));
    return xform::splice(in, idx3(p.at("src")), idx3(p.at("dst")), Shape3{sz[0], sz[1], sz[2]});
  }
  if (step.kind == "mask") {
    std::vector<Index3> origins;
    for (const auto& o : p.at("origins")) origins.push_back(idx3(o));
    return xform::mask_blocks(in, p.at("block").get<int>(), origins);
  }
  fail(ErrorKind::validation, "unknown transform kind '" + step.kind + "'");
}

/// Re-applies a record; bit-identical to the pipeline that produced it.
inline Volume replay(const Volume& in, const TransformRecord& record) {
  Volume cur = in;
  for (const auto& s : record.steps) cur = apply_step(cur, s);
  return cur;
}

struct AugmentResult {
  Volume volume;
  TransformRecord record;
};

inline TransformRecord sample_weak(const Shape3& patch, const WeakAugmentSpec& spec, Rng& rng) {
  spec.validate(patch);
  TransformRecord rec;
  if (spec.translation > 0 && bernoulli(rng, spec.p_translate)) {
    Index3 shift;
    for (int& s : shift) s = uniform_int(rng, -spec.translation, spec.translation);
    if (shift != Index3{0, 0, 0}) rec.steps.push_back({"translate", {{"shift", shift}}});
  }
  std::vector<int> rot_axes;
  for (int a = 0; a < 3; ++a) {
    const int u = a == 0 ? 1 : 0, v = a == 2 ? 1 : 2;
    if (spec.rotation_axes[a] && patch[u] == patch[v]) rot_axes.push_back(a);
  }
  if (!rot_axes.empty() && bernoulli(rng, spec.p_rotate)) {
    const int axis = rot_axes[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(rot_axes.size()) - 1))];
    rec.steps.push_back({"rotate90", {{"axis", axis}, {"k", uniform_int(rng, 1, 3)}}});
  }
  if (spec.scale_max > spec.scale_min && bernoulli(rng, spec.p_scale)) {
    rec.steps.push_back({"zoom", {{"factor", uniform(rng, spec.scale_min, spec.scale_max)}, {"linear", false}}});
  } else if (spec.scale_min == spec.scale_max && spec.scale_min != 1.0 && bernoulli(rng, spec.p_scale)) {
    rec.steps.push_back({"zoom", {{"factor", spec.scale_min}, {"linear", false}}});
  }
  for (int a = 0; a < 3; ++a)
    if (spec.flip_axes[a] && bernoulli(rng, spec.p_flip)) rec.steps.push_back({"flip", {{"axis", a}}});
  return rec;
}

inline TransformRecord sample_strong(const Shape3& patch, const StrongAugmentSpec& spec, Rng& rng) {
  spec.validate();
  TransformRecord rec;
  if (bernoulli(rng, spec.p_elastic)) {
    const Shape3 grid{xform::control_points(patch.d, spec.elastic_spacing),
                      xform::control_points(patch.h, spec.elastic_spacing),
                      xform::control_points(patch.w, spec.elastic_spacing)};
    std::vector<double> disp(3 * grid.size());
    for (double& d : disp) d = normal(rng, 0.0, spec.elastic_sigma);
    rec.steps.push_back({"elastic", {{"spacing", spec.elastic_spacing}, {"displacements", disp}}});
  }
  if (bernoulli(rng, spec.p_crop)) {
    const double frac = uniform(rng, spec.crop_min, spec.crop_max);
    Index3 extent, origin;
    for (int a = 0; a < 3; ++a) {
      extent[a] = std::clamp(static_cast<int>(std::lround(frac * patch[a])), 1, patch[a]);
      origin[a] = uniform_int(rng, 0, patch[a] - extent[a]);
    }
    rec.steps.push_back({"crop_resize", {{"origin", origin}, {"extent", extent}}});
  }
  if (spec.scale_max > spec.scale_min && bernoulli(rng, spec.p_scale)) {
    rec.steps.push_back({"zoom", {{"factor", uniform(rng, spec.scale_min, spec.scale_max)}, {"linear", true}}});
  }
  if (bernoulli(rng, spec.p_gamma)) {
    const double g = spec.gamma_max > spec.gamma_min ? std::exp(uniform(rng, std::log(spec.gamma_min), std::log(spec.gamma_max)))
                                                     : spec.gamma_min;
    rec.steps.push_back({"gamma", {{"gamma", g}}});
  }
  if (bernoulli(rng, spec.p_noise)) {
    const std::uint64_t seed = rng();
    rec.steps.push_back({"noise", {{"sigma", spec.noise_sigma}, {"seed", seed}}});
  }
  if (spec.splice_fraction > 0.0 && bernoulli(rng, spec.p_splice)) {
    const double edge = std::cbrt(spec.splice_fraction);
    Index3 size, src, dst;
    for (int a = 0; a < 3; ++a) {
      size[a] = std::clamp(static_cast<int>(std::lround(edge * patch[a])), 1, patch[a]);
      src[a] = uniform_int(rng, 0, patch[a] - size[a]);
      dst[a] = uniform_int(rng, 0, patch[a] - size[a]);
    }
    rec.steps.push_back({"splice", {{"src", src}, {"dst", dst}, {"size", size}}});
  }
  if (spec.mask_ratio > 0.0 && bernoulli(rng, spec.p_mask)) {
    const int b = spec.mask_block;
    std::vector<Index3> blocks;
    for (int z = 0; z < patch.d; z += b)
      for (int y = 0; y < patch.h; y += b)
        for (int x = 0; x < patch.w; x += b) blocks.push_back({z, y, x});
    std::shuffle(blocks.begin(), blocks.end(), rng);
    const double target = spec.mask_ratio * static_cast<double>(patch.size());
    std::vector<Index3> chosen;
    double covered = 0.0;
    for (const auto& o : blocks) {
      if (covered >= target) break;
      const double vol = static_cast<double>(std::min(b, patch.d - o[0])) * std::min(b, patch.h - o[1]) *
                         std::min(b, patch.w - o[2]);
      // Stop before a block that would overshoot more than it undershoots.
      if (covered + vol - target > target - covered) break;
      covered += vol;
      chosen.push_back(o);
    }
    nlohmann::json origins = nlohmann::json::array();
    for (const auto& o : chosen) origins.push_back(o);
    rec.steps.push_back({"mask", {{"block", b}, {"origins", origins}}});
  }
  return rec;
}

inline AugmentResult augment_weak(const Volume& patch, const WeakAugmentSpec& spec, Rng& rng) {
  TransformRecord rec = sample_weak(patch.shape, spec, rng);
  return {replay(patch, rec), std::move(rec)};
}

inline AugmentResult augment_strong(const Volume& patch, const StrongAugmentSpec& spec, Rng& rng) {
  TransformRecord rec = sample_strong(patch.shape, spec, rng);
  return {replay(patch, rec), std::move(rec)};
}

/// (x_w, x_s) views of one patch; the untouched original is the reconstruction target.
struct AugmentedPair {
  Volume weak;
  Volume strong;
  Volume original;
  TransformRecord weak_record;
  TransformRecord strong_record;
};

inline AugmentedPair make_pair(const Volume& patch, const WeakAugmentSpec& weak, const StrongAugmentSpec& strong,
                               Rng& rng) {
  AugmentResult w = augment_weak(patch, weak, rng);
  AugmentResult s = augment_strong(patch, strong, rng);
  return {std::move(w.volume), std::move(s.volume), patch, std::move(w.record), std::move(s.record)};
}

}  // namespace emc
