// Acceptance criteria 1-9. `acceptance --criterion k` runs one, no flag runs all.
// Prints one PASS/FAIL line per criterion; the exit status is non-zero on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "emconsist/cli/commands.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace emc;
using namespace emc::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char b[96];
  std::snprintf(b, sizeof b, f, a);
  return b;
}

std::filesystem::path work_dir(int k) {
  const auto p = std::filesystem::current_path() / "acceptance_work" / ("criterion_" + std::to_string(k));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

void note(const std::string& s) {
  std::fprintf(stderr, "  %s\n", s.c_str());
  std::fflush(stderr);
}

LabelVolume random_labels(Shape3 s, int ids, Rng& rng, double background) {
  LabelVolume l(s);
  for (auto& v : l.voxels) v = bernoulli(rng, background) ? 0u : static_cast<std::uint32_t>(uniform_int(rng, 1, ids));
  return l;
}

/// The default synthetic corpus (count, shape and seed as given), loaded from disk.
DatasetSpec make_corpus(const std::filesystem::path& dir, int count, std::uint64_t seed) {
  cli::SynthConfig c;
  c.count = count;
  c.spec.seed = seed;
  cli::synth_corpus(c, dir);
  return load_manifest(dir / "manifest.json");
}

// ---------------------------------------------------------------------------

constexpr double kGradTol = 1e-3;

Outcome criterion_1() {
  double worst = 0.0;
  std::string where;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const TinyProblem p = random_tiny_problem(seed);
    for (int term = 0; term < 4; ++term) {
      const GradCheckResult r = gradcheck(p, term);
      if (r.worst > worst) {
        worst = r.worst;
        where = "config " + std::to_string(seed) + " term " + std::to_string(term) + " " + r.where;
      }
    }
  }
  return {worst < kGradTol, "worst relative error " + fmt("%.3g", worst) + " at " + where + " (tol 1e-3)"};
}

constexpr double kMetricTol = 1e-9;

Outcome criterion_2() {
  Rng rng = make_stream({2, 0x41433032ull});
  double worst_voi = 0.0, worst_rand = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto gt = random_labels(Shape3::cube(6), uniform_int(rng, 1, 6), rng, uniform(rng, 0.0, 0.5));
    const auto pred = random_labels(Shape3::cube(6), uniform_int(rng, 1, 6), rng, uniform(rng, 0.0, 0.5));
    if (contingency(gt, pred).total == 0) continue;
    worst_voi = std::max(worst_voi, std::abs(voi(gt, pred).total - voi_oracle(gt, pred)));
    worst_rand = std::max(worst_rand, std::abs(adapted_rand(gt, pred).error - arand_oracle(gt, pred)));
  }
  int ap_mismatch = 0;
  for (int s = 0; s < 50; ++s) {
    // Up to 6 slabs along x; the prediction is the ground truth with relabeled noise.
    const int n = uniform_int(rng, 1, 6);
    LabelVolume gt(Shape3{6, 6, 36});
    std::vector<int> cuts{0};
    for (int k = 1; k < n; ++k) cuts.push_back(k * 36 / n);
    cuts.push_back(36);
    for (int k = 0; k < n; ++k)
      for (int z = 0; z < 6; ++z)
        for (int y = 0; y < 6; ++y)
          for (int x = cuts[k]; x < cuts[k + 1]; ++x) gt.at(z, y, x) = static_cast<std::uint32_t>(k + 1);
    LabelVolume pred = gt;
    const double flip = uniform(rng, 0.0, 0.4);
    for (auto& v : pred.voxels)
      if (bernoulli(rng, flip)) v = static_cast<std::uint32_t>(uniform_int(rng, 0, 8));
    const ApResult r = ap75_stratified(gt, pred);
    const std::size_t tp = ap_tp_oracle(gt, pred);
    std::size_t pred_instances = 0;
    {
      std::vector<bool> seen(9, false);
      for (auto v : pred.voxels)
        if (v && !seen[v]) {
          seen[v] = true;
          ++pred_instances;
        }
    }
    const double ap_oracle = static_cast<double>(tp) / static_cast<double>(n + pred_instances - tp);
    if (r.overall.tp != tp || std::abs(*r.overall.ap() - ap_oracle) > kMetricTol) ++ap_mismatch;
  }
  const bool pass = worst_voi <= kMetricTol && worst_rand <= kMetricTol && ap_mismatch == 0;
  return {pass, "max |dVOI| " + fmt("%.2g", worst_voi) + ", max |dARAND| " + fmt("%.2g", worst_rand) +
                    ", AP75 mismatches " + std::to_string(ap_mismatch) + "/50"};
}

Outcome criterion_3() {
  std::vector<std::string> failed;
  auto check = [&](bool ok, const char* what) {
    if (!ok) failed.emplace_back(what);
  };
  Rng rng = make_stream({3});
  Tensor<double> x(1, Shape3::cube(8));
  for (double& v : x.v) v = uniform(rng, 0.0, 1.0);
  check(recon_loss<double>({x}, {x}, {x}) == 0.0, "recon(x,x,x)");

  std::vector<double> m(8), n(8);
  for (double& v : m) v = normal(rng);
  for (double& v : n) v = normal(rng);
  check(std::abs(infonce_loss<double>({m}, {n}, 8, 0.07, false)) < 1e-12, "infonce N=1");

  std::vector<double> t(16, 0.0);
  t[0] = 1.0;
  t[9] = 1.0;
  check(std::abs(infonce_loss<double>({t}, {t}, 8, 1.0, false) - std::log(1.0 + std::exp(-1.0))) <= 1e-6,
        "infonce orthogonal");

  SimConfig sc;
  sc.identity_mlp = true;
  ParamLayout empty;
  Tensor<double> a(2, Shape3::cube(16)), b(3, Shape3::cube(16));
  for (double& v : a.v) v = normal(rng);
  for (double& v : b.v) v = normal(rng);
  const std::vector<Tensor<double>> pyr{a, b};
  check(std::abs(SimLoss<double>(empty, sc)(nullptr, {pyr}, {pyr}, {1, 2}) + 1.0) < 1e-12, "sim identical");

  const ObjectiveConfig def;
  check(def.tau == 0.07 && def.alpha == std::array<double, 3>{1.0, 0.1, 0.1}, "defaults tau/alpha");
  const TinyProblem p = random_tiny_problem(3);
  ObjectiveConfig oc = def;
  oc.tokens = p.objective.tokens;
  oc.sim = p.objective.sim;
  const ParamLayout L2 = pretrain_layout(p.backbone, oc);
  SiameseObjective<double> obj(p.backbone, oc, L2);
  const auto prm = init_parameters<double>(L2, 3);
  SiameseBatch<double> batch;
  for (int i = 0; i < 2; ++i)
    for (auto* v : {&batch.weak, &batch.strong, &batch.original}) {
      Tensor<double> in(1, p.backbone.patch);
      for (double& q : in.v) q = uniform(rng, 0.0, 1.0);
      v->push_back(std::move(in));
    }
  std::vector<int> ch;
  for (int c : pyramid_channels(p.backbone)) ch.push_back(c - 1);
  const LossBreakdown l = obj.evaluate(prm.values.data(), batch, ch);
  check(l.l_total == 1.0 * *l.l_r + 0.1 * *l.l_cross + 0.1 * *l.l_sim, "total weighted sum");

  std::string detail = failed.empty() ? "all closed forms hold" : "failed:";
  for (const auto& f : failed) detail += " " + f;
  return {failed.empty(), detail};
}

Outcome criterion_4() {
  double worst_voi = 0.0, worst_ap = 1.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthSpec s;
    s.seed = 1000 + seed;
    const SynthSample scene = synth_volume(s);
    const SegmentationResult r = segment_affinities(labels_to_affinities(scene.labels), SegmentParams{});
    const MetricsReport m = evaluate_segmentation(scene.labels, r.labels);
    worst_voi = std::max(worst_voi, m.voi.total);
    worst_ap = std::min(worst_ap, m.ap.overall.ap().value_or(0.0));
  }
  return {worst_voi == 0.0 && worst_ap == 1.0,
          "max VOI " + fmt("%.3g", worst_voi) + ", min AP75 " + fmt("%.3g", worst_ap) + " over 10 scenes"};
}

constexpr double kConvergenceRatio = 0.5;

Outcome criterion_5() {
  const auto dir = work_dir(5);
  const Dataset data = Dataset::load(make_corpus(dir / "corpus", 8, 0));
  bool pass = true;
  std::string detail;
  for (BackboneVariant v : {BackboneVariant::unet_noskip, BackboneVariant::vit}) {
    PretrainConfig cfg;
    cfg.iterations = 1000;
    cfg.batch_size = 2;
    cfg.backbone.variant = v;
    Pretrainer tr(cfg, data);
    double first = 0.0, last = 0.0, first_r = 0.0, last_r = 0.0;
    for (int k = 1; k <= cfg.iterations; ++k) {
      const LossBreakdown l = tr.step_once();
      if (k <= 100) {
        first += l.l_total / 100;
        first_r += *l.l_r / 100;
      }
      if (k > cfg.iterations - 100) {
        last += l.l_total / 100;
        last_r += *l.l_r / 100;
      }
      if (k % 100 == 0) note(std::string(to_string(v)) + " step " + std::to_string(k) + " l_total " + fmt("%.4f", l.l_total));
    }
    const double ratio = last / first;
    pass = pass && first > 0.0 && ratio <= kConvergenceRatio;
    detail += std::string(detail.empty() ? "" : "; ") + to_string(v) + ": l_total first100 " + fmt("%.4f", first) +
              " last100 " + fmt("%.4f", last) + " ratio " + fmt("%.3f", ratio) + " (l_r " + fmt("%.4f", first_r) +
              " -> " + fmt("%.4f", last_r) + ")";
  }
  return {pass, detail};
}

// Shared by criteria 6 and 7.
constexpr int kPretrainIterations = 1000;
constexpr int kFinetuneIterations = 300;
constexpr double kFinetuneLr = 1e-3;

FinetuneConfig transfer_finetune(std::uint64_t seed) {
  FinetuneConfig c;
  c.iterations = kFinetuneIterations;
  c.seed = seed;
  c.optimizer.lr = kFinetuneLr;
  return c;
}

Outcome criterion_6() {
  const auto dir = work_dir(6);
  const Dataset pre = Dataset::load(make_corpus(dir / "unlabeled", 8, 0));
  const Dataset fin = Dataset::load(make_corpus(dir / "labeled", 2, 1));
  const auto eval = load_labeled(make_corpus(dir / "eval", 2, 2));
  PretrainConfig pc;
  pc.iterations = kPretrainIterations;
  Pretrainer tr(pc, pre);
  while (tr.step() < static_cast<std::uint64_t>(pc.iterations)) tr.step_once();
  const Checkpoint ckpt = tr.checkpoint();
  note("pretrained " + std::to_string(pc.iterations) + " steps");
  const SegmentParams sp;
  double sum_r = 0.0, sum_p = 0.0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const FinetuneConfig fc = transfer_finetune(seed);
    const double vr = evaluate_model(AffinityPredictor(finetune_model(fc, fin, std::nullopt)), eval, sp).voi;
    const double vp = evaluate_model(AffinityPredictor(finetune_model(fc, fin, ckpt)), eval, sp).voi;
    note("seed " + std::to_string(seed) + " VOI random " + fmt("%.3f", vr) + " pretrained " + fmt("%.3f", vp));
    per_seed += " " + fmt("%+.3f", vr - vp);
    sum_r += vr;
    sum_p += vp;
  }
  const double mr = sum_r / 3, mp = sum_p / 3;
  return {mp <= mr && mr - mp > 0.0, "mean VOI random " + fmt("%.3f", mr) + ", pretrained " + fmt("%.3f", mp) +
                                         ", per-seed gain" + per_seed};
}

Outcome criterion_7() {
  const auto dir = work_dir(7);
  make_corpus(dir / "unlabeled", 8, 0);
  make_corpus(dir / "labeled", 2, 1);
  make_corpus(dir / "eval", 2, 2);
  AblationConfig cfg;
  cfg.pretrain.iterations = kPretrainIterations;
  cfg.pretrain.manifest = (dir / "unlabeled" / "manifest.json").string();
  cfg.finetune = transfer_finetune(0);
  cfg.finetune.manifest = (dir / "labeled" / "manifest.json").string();
  cfg.eval_manifest = (dir / "eval" / "manifest.json").string();
  const cli::AblationOutputs out = cli::cmd_ablate(cfg, dir / "run", note);
  std::fprintf(stderr, "%s", out.table.c_str());

  const std::vector<std::array<bool, 3>> expected{
      {false, false, false}, {false, true, false}, {true, false, false}, {true, true, false}, {true, true, true}};
  bool structure = out.rows.size() == expected.size() && !out.rows[0].pretrained;
  for (std::size_t i = 0; structure && i < expected.size(); ++i) structure = out.rows[i].losses == expected[i];
  structure = structure && out.table.find("VOI") != std::string::npos && out.table.find("Arand") != std::string::npos;
  const bool direction = structure && out.rows.back().voi <= out.rows.front().voi;
  std::string detail = std::string("table structure ") + (structure ? "ok" : "wrong");
  if (structure)
    detail += ", all-three VOI " + fmt("%.3f", out.rows.back().voi) + " vs baseline " + fmt("%.3f", out.rows.front().voi);
  return {structure && direction, detail};
}

Outcome criterion_8() {
  const auto dir = work_dir(8);
  make_corpus(dir / "corpus", 8, 0);
  const DatasetSpec labeled = make_corpus(dir / "labeled", 2, 1);
  auto bytes = [](const std::filesystem::path& p) { return read_file_bytes(p); };
  std::vector<std::vector<unsigned char>> ckpts, segs, metrics;
  for (int run = 0; run < 2; ++run) {
    const auto rd = dir / ("run_" + std::to_string(run));
    PretrainConfig pc;
    pc.iterations = 100;
    pc.seed = 7;
    pc.manifest = (dir / "corpus" / "manifest.json").string();
    const PretrainOutputs po = cli::cmd_pretrain(pc, rd / "pretrain");
    ckpts.push_back(bytes(po.final_checkpoint));
    FinetuneConfig fc = transfer_finetune(7);
    fc.iterations = 20;
    fc.manifest = (dir / "labeled" / "manifest.json").string();
    fc.pretrained = po.final_checkpoint.string();
    const auto seg_ckpt = cli::cmd_finetune(fc, rd / "finetune");
    cli::cmd_segment(seg_ckpt, labeled.sources[0], SegmentParams{}, rd / "segment");
    segs.push_back(bytes(rd / "segment" / "segmentation.emv"));
    cli::cmd_eval(labeled.labels[0], rd / "segment" / "segmentation.emv", rd / "eval");
    metrics.push_back(bytes(rd / "eval" / "metrics.json"));
  }
  const bool c = ckpts[0] == ckpts[1], s = segs[0] == segs[1], m = metrics[0] == metrics[1];
  return {c && s && m, std::string("step-100 checkpoint ") + (c ? "identical" : "differs") + ", segmentation " +
                           (s ? "identical" : "differs") + ", metrics.json " + (m ? "identical" : "differs") +
                           " (EMCONSIST_THREADS=" + std::to_string(worker_threads()) + ")"};
}

Outcome criterion_9() {
  Rng rng = make_stream({9});
  std::vector<Tensor<double>> levels;
  for (int extent : {32, 32, 32}) {
    Tensor<double> t(3, Shape3::cube(extent));
    for (double& v : t.v) v = normal(rng);
    levels.push_back(std::move(t));
  }
  const auto pooled = pool_pyramid(levels);
  double worst = 0.0;
  for (std::size_t l = 0; l < levels.size(); ++l)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < kPooledExtent; ++i)
        for (int j = 0; j < kPooledExtent; ++j)
          for (int k = 0; k < kPooledExtent; ++k)
            worst = std::max(worst, std::abs(pooled[l].at(c, i, j, k) - brute_cell_mean(levels[l], c, i, j, k, 16)));

  const std::vector<int> sizes{4999, 5000, 14999, 15000};
  int total = 0;
  for (int s : sizes) total += s;
  LabelVolume gt(Shape3{1, 1, total});
  int x = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i)
    for (int k = 0; k < sizes[i]; ++k) gt.voxels[static_cast<std::size_t>(x++)] = static_cast<std::uint32_t>(i + 1);
  const ApResult ap = ap75_stratified(gt, gt);
  const bool strata = stratum_of(4999) == SizeStratum::small && stratum_of(5000) == SizeStratum::medium &&
                      stratum_of(14999) == SizeStratum::medium && stratum_of(15000) == SizeStratum::large &&
                      ap.strata[0].gt_instances == 1 && ap.strata[1].gt_instances == 2 &&
                      ap.strata[2].gt_instances == 1 && ap.overall.tp == 4;
  return {worst <= 1e-6 && strata,
          "max pooling deviation " + fmt("%.2g", worst) + ", strata " + (strata ? "exact" : "wrong")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  int only = 0;
  app.add_option("--criterion", only, "Run a single criterion (1-9)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", criterion_1},     {"metric oracle equivalence", criterion_2},
      {"loss closed forms", criterion_3},        {"oracle segmentation", criterion_4},
      {"pretraining convergence", criterion_5},  {"transfer direction", criterion_6},
      {"ablation harness", criterion_7},         {"determinism", criterion_8},
      {"pooling and strata exactness", criterion_9}};
  bool all = true;
  for (int k = 1; k <= 9; ++k) {
    if (only && k != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[static_cast<std::size_t>(k - 1)].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d (%s): %s; %s [%.0fs]\n", k, criteria[static_cast<std::size_t>(k - 1)].first,
                o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
