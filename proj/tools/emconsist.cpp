// emconsist: synth | pretrain | finetune | segment | eval | ablate | report

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "emconsist/cli/commands.hpp"

namespace {

using namespace emc;
using namespace emc::cli;

struct Common {
  std::optional<std::string> config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* sub, Common& c, bool needs_config) {
  auto* opt = sub->add_option("--config", c.config, "JSON config file");
  if (needs_config) opt->required();
  sub->add_option("--set", c.sets, "Override a config key, e.g. --set optimizer.lr=3e-4 (repeatable)");
  sub->add_option("--seed", c.seed, "Seed; overrides the config file and --set");
  sub->add_option("--out", c.out, "Output directory")->required();
}

ConfigDocument document(const Common& c) {
  return ConfigDocument::load(c.config ? std::optional<std::filesystem::path>(*c.config) : std::nullopt, c.sets);
}

void add_thresholds(CLI::App* sub, SegmentParams& p) {
  sub->add_option("--seed-threshold", p.seed_threshold, "Watershed seed affinity threshold")->capture_default_str();
  sub->add_option("--boundary-threshold", p.boundary_threshold, "Watershed boundary affinity threshold")
      ->capture_default_str();
  sub->add_option("--merge-threshold", p.merge_threshold, "Agglomeration threshold")->capture_default_str();
  sub->add_option("--stride", p.stride, "Sliding-window stride in voxels")->capture_default_str();
}

void say(const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiscale-consistency pretraining and segmentation for 3D EM-like volumes"};
  app.require_subcommand(1);

  Common synth_c, pre_c, fin_c, abl_c;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled corpus and manifest");
  add_common(synth, synth_c, false);

  auto* pre = app.add_subcommand("pretrain", "Self-supervised pretraining");
  add_common(pre, pre_c, true);
  std::optional<std::string> resume;
  pre->add_option("--resume", resume, "Continue from a pretrain checkpoint");

  auto* fin = app.add_subcommand("finetune", "Affinity finetuning, optionally from a pretrain checkpoint");
  add_common(fin, fin_c, true);

  auto* seg = app.add_subcommand("segment", "Predict affinities and segment a volume");
  std::string seg_ckpt, seg_vol, seg_out;
  SegmentParams seg_p;
  seg->add_option("--checkpoint", seg_ckpt, "Segmentation checkpoint")->required();
  seg->add_option("--volume", seg_vol, "Input volume")->required();
  seg->add_option("--out", seg_out, "Output directory")->required();
  add_thresholds(seg, seg_p);

  auto* ev = app.add_subcommand("eval", "Compare a segmentation with ground truth");
  std::string ev_gt, ev_pred;
  std::optional<std::string> ev_out;
  bool ev_json = false;
  ev->add_option("--gt", ev_gt, "Ground-truth label volume")->required();
  ev->add_option("--pred", ev_pred, "Predicted label volume")->required();
  ev->add_option("--out", ev_out, "Also write metrics.json, metrics.txt and a results line here");
  ev->add_flag("--json", ev_json, "Print JSON instead of the table");

  auto* abl = app.add_subcommand("ablate", "Pretraining-loss ablation table");
  add_common(abl, abl_c, true);
  SegmentParams abl_p;
  add_thresholds(abl, abl_p);

  auto* rep = app.add_subcommand("report", "Loss-curve SVGs and a summary table for a run directory");
  std::string rep_dir;
  rep->add_option("run_dir", rep_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) {
      const SynthConfig c = resolve_synth(document(synth_c), synth_c.seed);
      cmd_synth(c, synth_c.out);
      say("wrote " + std::to_string(c.count) + " volumes to " + synth_c.out);
    } else if (*pre) {
      const PretrainConfig c = resolve_pretrain(document(pre_c), pre_c.seed);
      const auto po = cmd_pretrain(c, pre_c.out,
                                   resume ? std::optional<std::filesystem::path>(*resume) : std::nullopt, say);
      say("checkpoint " + po.final_checkpoint.string());
    } else if (*fin) {
      const FinetuneConfig c = resolve_finetune(document(fin_c), fin_c.seed);
      say("checkpoint " + cmd_finetune(c, fin_c.out, say).string());
    } else if (*seg) {
      const auto r = cmd_segment(seg_ckpt, seg_vol, seg_p, seg_out);
      std::printf("%s\n", r.to_json().dump(2).c_str());
    } else if (*ev) {
      const MetricsReport m = cmd_eval(ev_gt, ev_pred, ev_out ? std::optional<std::filesystem::path>(*ev_out)
                                                               : std::nullopt);
      std::printf("%s", ev_json ? (m.to_json().dump(2) + "\n").c_str() : m.table().c_str());
    } else if (*abl) {
      AblationConfig c = resolve_ablation(document(abl_c), abl_c.seed);
      if (abl->count("--seed-threshold")) c.segment.seed_threshold = abl_p.seed_threshold;
      if (abl->count("--boundary-threshold")) c.segment.boundary_threshold = abl_p.boundary_threshold;
      if (abl->count("--merge-threshold")) c.segment.merge_threshold = abl_p.merge_threshold;
      if (abl->count("--stride")) c.segment.stride = abl_p.stride;
      c.validate();
      std::printf("%s", cmd_ablate(c, abl_c.out, say).table.c_str());
    } else if (*rep) {
      for (const auto& f : write_report(rep_dir).files) say("wrote " + f.string());
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
  return 0;
}
