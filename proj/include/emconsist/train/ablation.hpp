#pragma once

// Pretrain -> finetune -> segment -> evaluate, once without pretraining and once per subset
// of pretraining losses.

#include <array>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emconsist/core/dataset.hpp"
#include "emconsist/eval/metrics.hpp"
#include "emconsist/seg/pipeline.hpp"
#include "emconsist/train/pretrain.hpp"

namespace emc {

struct LabeledVolume {
  Volume image;
  LabelVolume labels;
};

/// Loads and normalizes every (source, labels) pair of a manifest.
inline std::vector<LabeledVolume> load_labeled(const DatasetSpec& spec) {
  require(spec.labels.size() == spec.sources.size(), ErrorKind::config, "evaluation manifest needs labels for every source");
  std::vector<LabeledVolume> out;
  for (std::size_t i = 0; i < spec.sources.size(); ++i) {
    LabeledVolume v{load_volume(spec.sources[i]), load_labels(spec.labels[i])};
    normalize(v.image);
    require(v.image.shape == v.labels.shape, ErrorKind::config,
            "labels for " + spec.sources[i].string() + " differ in shape from the volume");
    out.push_back(std::move(v));
  }
  return out;
}

struct EvalSummary {
  double voi = 0.0;    // mean voi_total
  double arand = 0.0;  // mean adapted Rand error
  std::vector<MetricsReport> reports;

  nlohmann::json to_json() const {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& r : reports) per.push_back(r.to_json());
    return {{"voi", voi}, {"arand", arand}, {"volumes", per}};
  }
};

inline EvalSummary evaluate_model(const AffinityPredictor& model, const std::vector<LabeledVolume>& data,
                                  const SegmentParams& params) {
  require(!data.empty(), ErrorKind::config, "no evaluation volumes");
  EvalSummary s;
  for (const auto& v : data) {
    const SegmentationResult seg = segment_volume(model, v.image, params);
    s.reports.push_back(evaluate_segmentation(v.labels, seg.labels));
    s.voi += s.reports.back().voi.total;
    s.arand += s.reports.back().arand.error;
  }
  s.voi /= static_cast<double>(data.size());
  s.arand /= static_cast<double>(data.size());
  return s;
}

/// Finetunes (from `pretrained` when given) and returns the final segmentation checkpoint.
inline Checkpoint finetune_model(const FinetuneConfig& cfg, const Dataset& labeled,
                                 const std::optional<Checkpoint>& pretrained,
                                 const std::function<void(std::uint64_t, double)>& on_step = {}) {
  Finetuner ft(cfg, labeled, pretrained);
  while (ft.step() < static_cast<std::uint64_t>(cfg.iterations)) {
    const double l = ft.step_once();
    if (on_step) on_step(ft.step(), l);
  }
  return ft.checkpoint();
}

struct AblationConfig {
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  std::string eval_manifest;
  SegmentParams segment;
  std::vector<std::vector<std::string>> subsets{{"cross"}, {"r"}, {"r", "cross"}, {"r", "cross", "sim"}};

  void validate() const {
    pretrain.validate();
    finetune.validate();
    require(!subsets.empty(), ErrorKind::validation, "ablation needs at least one loss subset");
    for (const auto& s : subsets) {
      require(!s.empty(), ErrorKind::validation, "every ablation subset must enable at least one loss");
      ObjectiveConfig o;
      o.set_enabled(s);
    }
    segment.validate();
  }

  nlohmann::json to_json() const {
    return {{"pretrain", pretrain.to_json()},
            {"finetune", finetune.to_json()},
            {"eval_manifest", eval_manifest},
            {"segment", segment.to_json()},
            {"subsets", subsets}};
  }

  void read(ConfigReader& r) {
    {
      ConfigReader c = r.child("pretrain");
      pretrain.read(c);
    }
    {
      ConfigReader c = r.child("finetune");
      finetune.read(c);
    }
    r.get("eval_manifest", eval_manifest);
    {
      ConfigReader c = r.child("segment");
      segment.read(c);
    }
    r.get("subsets", subsets);
    r.finish();
  }
};

struct AblationRow {
  bool pretrained = false;
  std::array<bool, 3> losses{false, false, false};  // r, cross, sim
  double voi = 0.0;
  double arand = 0.0;

  nlohmann::json to_json() const {
    return {{"pretrained", pretrained},
            {"l_r", losses[0]},
            {"l_cross", losses[1]},
            {"l_sim", losses[2]},
            {"voi", voi},
            {"arand", arand}};
  }
};

/// Row 0 is the no-pretraining baseline, followed by one row per subset. Every run writes
/// into its own directory under out_dir.
inline std::vector<AblationRow> run_ablation(const AblationConfig& cfg, const Dataset& pretrain_data,
                                             const Dataset& finetune_data, const std::vector<LabeledVolume>& eval,
                                             const std::filesystem::path& out_dir,
                                             const std::function<void(const std::string&)>& progress = {}) {
  cfg.validate();
  std::vector<AblationRow> rows;
  auto finish = [&](AblationRow row, const Checkpoint& seg, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "segmentation.ckpt", seg);
    const EvalSummary s = evaluate_model(AffinityPredictor(seg), eval, cfg.segment);
    write_text_file(dir / "metrics.json", s.to_json().dump(2) + "\n");
    row.voi = s.voi;
    row.arand = s.arand;
    rows.push_back(row);
  };

  if (progress) progress("baseline: finetune from random initialization");
  finish(AblationRow{}, finetune_model(cfg.finetune, finetune_data, std::nullopt), out_dir / "baseline");

  for (const auto& subset : cfg.subsets) {
    PretrainConfig pc = cfg.pretrain;
    pc.objective.set_enabled(subset);
    std::string name;
    for (const auto& s : subset) name += (name.empty() ? "" : "+") + s;
    if (progress) progress("pretrain " + name);
    const auto dir = out_dir / name;
    Pretrainer trainer(pc, pretrain_data);
    const PretrainOutputs po = run_pretrain(trainer, dir / "pretrain");
    if (progress) progress("finetune " + name);
    AblationRow row;
    row.pretrained = true;
    row.losses = pc.objective.enabled;
    finish(row, finetune_model(cfg.finetune, finetune_data, load_checkpoint(po.final_checkpoint)), dir);
  }
  return rows;
}

/// Plain-text table: check marks per loss, then VOI and Arand with the change relative to
/// the baseline row (positive = better).
inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-6s | %-6s | %-7s | %-17s | %-17s\n", "L_sim", "L_r", "L_cross", "VOI (lower)",
                "Arand (lower)");
  out += line;
  out += std::string(66, '-') + "\n";
  const AblationRow* base = nullptr;
  for (const auto& r : rows)
    if (!r.pretrained) base = &r;
  for (const auto& r : rows) {
    auto mark = [&](int i) { return r.losses[static_cast<std::size_t>(i)] ? "x" : ""; };
    char voi[40], ar[40];
    if (base && r.pretrained) {
      std::snprintf(voi, sizeof voi, "%.3f(%+.3f)", r.voi, base->voi - r.voi);
      std::snprintf(ar, sizeof ar, "%.3f(%+.3f)", r.arand, base->arand - r.arand);
    } else {
      std::snprintf(voi, sizeof voi, "%.3f", r.voi);
      std::snprintf(ar, sizeof ar, "%.3f", r.arand);
    }
    std::snprintf(line, sizeof line, "%-6s | %-6s | %-7s | %-17s | %-17s\n", mark(2), mark(0), mark(1), voi, ar);
    out += line;
  }
  return out;
}

}  // namespace emc
