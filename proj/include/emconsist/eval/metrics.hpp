#pragma once

// Segmentation metrics over a sparse contingency table: variation of information (bits),
// adapted Rand error and size-stratified AP at IoU > 0.75.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "emconsist/core/error.hpp"
#include "emconsist/core/volume.hpp"

namespace emc {

struct ContingencyCell {
  std::uint32_t gt = 0, pred = 0;
  std::uint64_t count = 0;
};

/// Joint counts sorted by (gt, pred) with the matching marginals.
struct ContingencyTable {
  std::vector<ContingencyCell> cells;
  std::vector<std::pair<std::uint32_t, std::uint64_t>> gt_sizes, pred_sizes;  // sorted by id
  std::uint64_t total = 0;
};

/// Counts over voxels with gt != 0 unless include_background is set.
inline ContingencyTable contingency(const LabelVolume& gt, const LabelVolume& pred, bool include_background = false) {
  require(gt.shape == pred.shape, ErrorKind::validation,
          "ground truth " + gt.shape.str() + " and prediction " + pred.shape.str() + " differ in shape");
  std::vector<std::uint64_t> keys;
  keys.reserve(gt.voxels.size());
  for (std::size_t i = 0; i < gt.voxels.size(); ++i) {
    if (gt.voxels[i] == 0 && !include_background) continue;
    keys.push_back((static_cast<std::uint64_t>(gt.voxels[i]) << 32) | pred.voxels[i]);
  }
  std::sort(keys.begin(), keys.end());
  ContingencyTable t;
  t.total = keys.size();
  for (std::size_t i = 0; i < keys.size();) {
    std::size_t j = i;
    while (j < keys.size() && keys[j] == keys[i]) ++j;
    t.cells.push_back({static_cast<std::uint32_t>(keys[i] >> 32), static_cast<std::uint32_t>(keys[i] & 0xFFFFFFFFu),
                       static_cast<std::uint64_t>(j - i)});
    i = j;
  }
  std::unordered_map<std::uint32_t, std::uint64_t> g, p;
  for (const auto& c : t.cells) {
    g[c.gt] += c.count;
    p[c.pred] += c.count;
  }
  t.gt_sizes.assign(g.begin(), g.end());
  t.pred_sizes.assign(p.begin(), p.end());
  std::sort(t.gt_sizes.begin(), t.gt_sizes.end());
  std::sort(t.pred_sizes.begin(), t.pred_sizes.end());
  return t;
}

struct VoiResult {
  double split = 0.0;  // H(pred | gt)
  double merge = 0.0;  // H(gt | pred)
  double total = 0.0;
  bool empty = false;  // no foreground voxels
};

inline VoiResult voi(const ContingencyTable& t) {
  VoiResult r;
  if (t.total == 0) {
    r.empty = true;
    return r;
  }
  const double n = static_cast<double>(t.total);
  std::unordered_map<std::uint32_t, double> gs, ps;
  for (const auto& [id, c] : t.gt_sizes) gs[id] = static_cast<double>(c);
  for (const auto& [id, c] : t.pred_sizes) ps[id] = static_cast<double>(c);
  for (const auto& c : t.cells) {
    const double nij = static_cast<double>(c.count);
    r.split -= nij / n * std::log2(nij / gs[c.gt]);
    r.merge -= nij / n * std::log2(nij / ps[c.pred]);
  }
  r.split = std::max(0.0, r.split);
  r.merge = std::max(0.0, r.merge);
  r.total = r.split + r.merge;
  return r;
}

inline VoiResult voi(const LabelVolume& gt, const LabelVolume& pred) { return voi(contingency(gt, pred)); }

struct RandResult {
  double error = 0.0;
  double precision = 1.0;
  double recall = 1.0;
  bool empty = false;
};

inline RandResult adapted_rand(const ContingencyTable& t) {
  RandResult r;
  if (t.total == 0) {
    r.empty = true;
    return r;
  }
  double sum_joint = 0.0, sum_gt = 0.0, sum_pred = 0.0;
  for (const auto& c : t.cells) sum_joint += static_cast<double>(c.count) * static_cast<double>(c.count);
  for (const auto& [id, c] : t.gt_sizes) sum_gt += static_cast<double>(c) * static_cast<double>(c);
  for (const auto& [id, c] : t.pred_sizes) sum_pred += static_cast<double>(c) * static_cast<double>(c);
  r.precision = sum_joint / sum_pred;
  r.recall = sum_joint / sum_gt;
  r.error = 1.0 - 2.0 * r.precision * r.recall / (r.precision + r.recall);
  r.error = std::clamp(r.error, 0.0, 1.0);
  return r;
}

inline RandResult adapted_rand(const LabelVolume& gt, const LabelVolume& pred, bool include_background = false) {
  return adapted_rand(contingency(gt, pred, include_background));
}

// ---------------------------------------------------------------------------
// Average precision at IoU > 0.75, stratified by instance size.

inline constexpr std::uint64_t kSmallBelow = 5000;
inline constexpr std::uint64_t kLargeFrom = 15000;
inline constexpr double kApIou = 0.75;

enum class SizeStratum { small = 0, medium = 1, large = 2 };

inline SizeStratum stratum_of(std::uint64_t voxels) {
  if (voxels < kSmallBelow) return SizeStratum::small;
  if (voxels < kLargeFrom) return SizeStratum::medium;
  return SizeStratum::large;
}

inline const char* to_string(SizeStratum s) {
  switch (s) {
    case SizeStratum::small: return "small";
    case SizeStratum::medium: return "medium";
    case SizeStratum::large: return "large";
  }
  return "?";
}

struct ApCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, gt_instances = 0;
  /// Absent when the stratum holds neither ground-truth nor predicted instances.
  std::optional<double> ap() const {
    const std::uint64_t d = tp + fp + fn;
    if (d == 0) return std::nullopt;
    return static_cast<double>(tp) / static_cast<double>(d);
  }
};

struct ApResult {
  ApCounts overall;
  std::array<ApCounts, 3> strata;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> matches;  // (gt, pred)
};

/// Instances are the nonzero ids. Candidate pairs with IoU > 0.75 are matched greedily in
/// descending IoU; a TP/FN is counted in the stratum of its ground-truth instance and an
/// unmatched prediction as FP in the stratum of its own size.
inline ApResult ap75_stratified(const LabelVolume& gt, const LabelVolume& pred) {
  const ContingencyTable t = contingency(gt, pred, true);
  std::unordered_map<std::uint32_t, std::uint64_t> gs, ps;
  for (const auto& [id, c] : t.gt_sizes)
    if (id) gs[id] = c;
  for (const auto& [id, c] : t.pred_sizes)
    if (id) ps[id] = c;
  struct Cand {
    double iou;
    std::uint32_t g, p;
  };
  std::vector<Cand> cands;
  for (const auto& c : t.cells) {
    if (c.gt == 0 || c.pred == 0) continue;
    const double inter = static_cast<double>(c.count);
    const double iou = inter / (static_cast<double>(gs[c.gt] + ps[c.pred]) - inter);
    if (iou > kApIou) cands.push_back({iou, c.gt, c.pred});
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.g != b.g) return a.g < b.g;
    return a.p < b.p;
  });
  ApResult r;
  std::unordered_map<std::uint32_t, bool> gmatched, pmatched;
  for (const auto& c : cands) {
    if (gmatched[c.g] || pmatched[c.p]) continue;
    gmatched[c.g] = pmatched[c.p] = true;
    r.matches.emplace_back(c.g, c.p);
  }
  std::sort(r.matches.begin(), r.matches.end());
  for (const auto& [id, size] : t.gt_sizes) {
    if (!id) continue;
    ApCounts& s = r.strata[static_cast<std::size_t>(stratum_of(size))];
    s.gt_instances += 1;
    (gmatched[id] ? s.tp : s.fn) += 1;
  }
  for (const auto& [id, size] : t.pred_sizes)
    if (id && !pmatched[id]) r.strata[static_cast<std::size_t>(stratum_of(size))].fp += 1;
  for (const auto& s : r.strata) {
    r.overall.tp += s.tp;
    r.overall.fp += s.fp;
    r.overall.fn += s.fn;
    r.overall.gt_instances += s.gt_instances;
  }
  return r;
}

// ---------------------------------------------------------------------------

struct MetricsReport {
  VoiResult voi;
  RandResult arand;
  ApResult ap;

  nlohmann::json to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json strata = nlohmann::json::object();
    for (int s = 0; s < 3; ++s) {
      const ApCounts& c = ap.strata[static_cast<std::size_t>(s)];
      strata[to_string(static_cast<SizeStratum>(s))] = {
          {"ap75", opt(c.ap())}, {"instances", c.gt_instances}, {"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
    }
    return {{"voi_split", voi.split},
            {"voi_merge", voi.merge},
            {"voi_total", voi.total},
            {"arand_error", arand.error},
            {"empty_foreground", voi.empty},
            {"ap75", opt(ap.overall.ap())},
            {"strata", strata}};
  }

  /// Aligned plain-text rendering.
  std::string table() const {
    auto fmt = [](const std::optional<double>& v) {
      if (!v) return std::string("-");
      char b[32];
      std::snprintf(b, sizeof b, "%.4f", *v);
      return std::string(b);
    };
    std::string out;
    char line[128];
    std::snprintf(line, sizeof line, "%-14s %10s\n", "metric", "value");
    out += line;
    const std::pair<const char*, std::optional<double>> rows[] = {
        {"voi_split", voi.split},   {"voi_merge", voi.merge},          {"voi_total", voi.total},
        {"arand_error", arand.error}, {"ap75", ap.overall.ap()},
        {"ap75_small", ap.strata[0].ap()}, {"ap75_medium", ap.strata[1].ap()}, {"ap75_large", ap.strata[2].ap()}};
    for (const auto& [name, v] : rows) {
      std::snprintf(line, sizeof line, "%-14s %10s\n", name, fmt(v).c_str());
      out += line;
    }
    return out;
  }
};

inline MetricsReport evaluate_segmentation(const LabelVolume& gt, const LabelVolume& pred) {
  MetricsReport r;
  const ContingencyTable t = contingency(gt, pred);
  r.voi = voi(t);
  r.arand = adapted_rand(t);
  r.ap = ap75_stratified(gt, pred);
  return r;
}

}  // namespace emc
