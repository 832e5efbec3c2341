#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <memory>

#include "fixtures.hpp"

using namespace emc;
using emc::testing::scratch_dir;
using emc::testing::tiny_pretrain;
using emc::testing::unlabeled;

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Adam, FirstStepClosedForm) {
  // f(x) = (x - 3)^2 at x = 0: g = -6, mhat = g, vhat = g^2, so x1 = lr * g/(|g| + eps) sign-flipped.
  AdamConfig cfg;
  std::vector<double> x{0.0};
  AdamState<double> st(1);
  adam_step(x, {-6.0}, st, cfg);
  EXPECT_NEAR(x[0], 1e-4 * 6.0 / (6.0 + 1e-8), 1e-18);
  EXPECT_NEAR(st.m[0], 0.1 * -6.0, 1e-15);
  EXPECT_NEAR(st.v[0], 0.001 * 36.0, 1e-15);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, MatchesReferenceRecurrenceOverManySteps) {
  AdamConfig cfg;
  cfg.lr = 0.05;
  std::vector<double> x{0.0};
  AdamState<double> st(1);
  double xr = 0.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 200; ++t) {
    adam_step(x, {2.0 * (x[0] - 3.0)}, st, cfg);
    const double g = 2.0 * (xr - 3.0);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    xr -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(x[0], xr, 1e-12);
  EXPECT_NEAR(x[0], 3.0, 0.1);
}

TEST(Adam, ZeroLearningRateLeavesParametersAndClipBoundsNorm) {
  AdamConfig cfg;
  cfg.lr = 0.0;
  std::vector<float> x{1.0f, -2.0f};
  AdamState<float> st(2);
  adam_step(x, {3.0f, 4.0f}, st, cfg);
  EXPECT_EQ(x, (std::vector<float>{1.0f, -2.0f}));
  cfg.clip = true;
  cfg.clip_norm = 1.0;
  AdamState<float> st2(2);
  EXPECT_NEAR(adam_step(x, {3.0f, 4.0f}, st2, cfg), 5.0, 1e-6);
  EXPECT_NEAR(st2.m[0], 0.1 * 0.6, 1e-6);
  EXPECT_THROW(adam_step(x, {std::nanf(""), 0.0f}, st2, cfg), Error);
}

TEST(Adam, Defaults) {
  const AdamConfig cfg;
  EXPECT_EQ(cfg.beta1, 0.9);
  EXPECT_EQ(cfg.beta2, 0.999);
  EXPECT_EQ(cfg.lr, 1e-4);
}

TEST(Pretrainer, SingleIterationWritesOneRowAndOneCheckpoint) {
  const auto dir = scratch_dir("pretrain_one");
  Pretrainer tr(tiny_pretrain(1), unlabeled(1, 2, Shape3::cube(16)));
  const auto out = run_pretrain(tr, dir);
  const auto lines = read_lines(out.loss_log);
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0], "step,l_r,l_cross,l_sim,l_total");
  EXPECT_EQ(lines[1].rfind("1,", 0), 0u);
  std::size_t ckpts = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) ckpts += e.path().extension() == ".ckpt";
  EXPECT_EQ(ckpts, 1u);
  EXPECT_EQ(load_checkpoint(out.final_checkpoint).step, 1u);
}

TEST(Pretrainer, DisabledTermsAreAbsentNotZero) {
  const auto dir = scratch_dir("pretrain_r_only");
  auto cfg = tiny_pretrain(2);
  cfg.objective.set_enabled({"r"});
  Pretrainer tr(cfg, unlabeled(1, 1, Shape3::cube(16)));
  const auto out = run_pretrain(tr, dir);
  for (const auto& l : out.losses) {
    EXPECT_TRUE(l.l_r.has_value());
    EXPECT_FALSE(l.l_cross.has_value());
    EXPECT_FALSE(l.l_sim.has_value());
    EXPECT_EQ(l.l_total, *l.l_r);
  }
  const auto lines = read_lines(out.loss_log);
  EXPECT_NE(lines[1].find(",,,"), std::string::npos) << lines[1];
}

TEST(Pretrainer, EmptyLossSubsetIsValidationError) {
  auto cfg = tiny_pretrain(1);
  cfg.objective.enabled = {false, false, false};
  try {
    Pretrainer tr(cfg, unlabeled(1, 1, Shape3::cube(16)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::validation);
  }
  EXPECT_THROW(tiny_pretrain().objective.set_enabled({"r", "bogus"}), Error);
}

TEST(Pretrainer, ResumeMatchesUninterruptedRun) {
  const auto data = unlabeled(1, 2, Shape3::cube(16));
  auto cfg = tiny_pretrain(4);
  cfg.checkpoint_interval = 2;
  const auto full_dir = scratch_dir("resume_full"), part_dir = scratch_dir("resume_part");
  Pretrainer full(cfg, data);
  run_pretrain(full, full_dir);
  ASSERT_TRUE(std::filesystem::exists(full_dir / "step_000002.ckpt"));

  Pretrainer part(cfg, data);
  part.restore(load_checkpoint(full_dir / "step_000002.ckpt"));
  run_pretrain(part, part_dir);
  EXPECT_EQ(part.params(), full.params());
  EXPECT_EQ(load_checkpoint(part_dir / "final.ckpt"), load_checkpoint(full_dir / "final.ckpt"));
}

TEST(Pretrainer, DeterministicAcrossInstancesAndBatchStreams) {
  const auto data = unlabeled(1, 2, Shape3::cube(16));
  auto cfg = tiny_pretrain(2);
  Pretrainer a(cfg, data), b(cfg, data);
  a.step_once();
  a.step_once();
  b.step_once();
  b.step_once();
  EXPECT_EQ(a.params(), b.params());
  EXPECT_EQ(a.channels(7), b.channels(7));
  const auto b1 = a.make_batch(3), b2 = b.make_batch(3);
  EXPECT_EQ(b1.weak[0].v, b2.weak[0].v);
  EXPECT_NE(a.make_batch(3).weak[0].v, a.make_batch(4).weak[0].v);
}

// Buffers land at different addresses on each pass; the gradient bits must not follow them.
TEST(Pretrainer, GradientIndependentOfHeapLayout) {
  const auto data = unlabeled(1, 2, Shape3::cube(16));
  const Pretrainer t(tiny_pretrain(1), data);
  const auto batch = t.make_batch(1);
  const auto ch = t.channels(1);
  std::vector<float> ref;
  std::vector<std::unique_ptr<char[]>> pads;
  for (int pass = 0; pass < 60; ++pass) {
    pads.emplace_back(new char[16 * static_cast<std::size_t>(pass % 7) + 8]);
    const auto copy = batch;
    pads.emplace_back(new char[16 * static_cast<std::size_t>(pass % 5) + 8]);
    std::vector<float> g(t.params().size(), 0.0f);
    t.objective().evaluate(t.params().data(), copy, ch, &g);
    if (ref.empty())
      ref = g;
    else
      ASSERT_EQ(g, ref) << "pass " << pass;
  }
}

TEST(Pretrainer, RestoreRejectsForeignCheckpoint) {
  const auto data = unlabeled(1, 1, Shape3::cube(16));
  Pretrainer a(tiny_pretrain(1), data);
  Checkpoint c = a.checkpoint();
  c.kind = "segmentation";
  EXPECT_THROW(a.restore(c), Error);
  auto other = tiny_pretrain(1);
  other.backbone.channels = {2, 3, 5};
  Pretrainer b(other, data);
  EXPECT_THROW(b.restore(a.checkpoint()), Error);
}

TEST(PretrainConfig, DefaultsAndStrictParsing) {
  const PretrainConfig d;
  EXPECT_EQ(d.objective.tau, 0.07);
  EXPECT_EQ(d.objective.alpha, (std::array<double, 3>{1.0, 0.1, 0.1}));
  EXPECT_EQ(d.backbone.channels, (std::vector<int>{8, 16, 32}));
  const auto round = PretrainConfig::from_json(d.to_json());
  EXPECT_EQ(round.to_json(), d.to_json());
  auto j = d.to_json();
  j["objective"]["tau"] = 0.0;
  EXPECT_THROW(PretrainConfig::from_json(j), Error);
  j = d.to_json();
  j["unexpected"] = 1;
  EXPECT_THROW(PretrainConfig::from_json(j), Error);
}
