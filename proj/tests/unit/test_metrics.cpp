#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "emconsist/core/rng.hpp"
#include "emconsist/eval/metrics.hpp"
#include "oracles.hpp"

using namespace emc;
using namespace emc::testing;

namespace {

LabelVolume random_labels(Shape3 s, int ids, std::uint64_t seed, double background = 0.2) {
  Rng rng = make_stream({seed, 0x4d45ull});
  LabelVolume l(s);
  for (auto& v : l.voxels) v = bernoulli(rng, background) ? 0u : static_cast<std::uint32_t>(uniform_int(rng, 1, ids));
  return l;
}

LabelVolume blocks(Shape3 s, const std::vector<int>& widths) {
  LabelVolume l(s);
  int x0 = 0;
  for (std::size_t k = 0; k < widths.size(); ++k) {
    for (int z = 0; z < s.d; ++z)
      for (int y = 0; y < s.h; ++y)
        for (int x = x0; x < x0 + widths[k]; ++x) l.at(z, y, x) = static_cast<std::uint32_t>(k + 1);
    x0 += widths[k];
  }
  return l;
}

}  // namespace

TEST(Voi, MatchesEntropyOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto gt = random_labels(Shape3{6, 7, 8}, 4, seed), pred = random_labels(Shape3{6, 7, 8}, 5, seed + 100);
    const auto r = voi(gt, pred);
    EXPECT_NEAR(r.total, voi_oracle(gt, pred), 1e-9);
    EXPECT_NEAR(r.total, r.split + r.merge, 1e-12);
  }
}

TEST(Voi, ClosedForms) {
  const auto gt = blocks(Shape3{2, 2, 8}, {4, 4});
  EXPECT_EQ(voi(gt, gt).total, 0.0);
  // Merging two equal halves costs exactly one bit of merge error.
  const auto one = blocks(Shape3{2, 2, 8}, {8});
  const auto m = voi(gt, one);
  EXPECT_NEAR(m.merge, 1.0, 1e-12);
  EXPECT_NEAR(m.split, 0.0, 1e-12);
  const auto s = voi(one, gt);
  EXPECT_NEAR(s.split, 1.0, 1e-12);
  // Relabeling is free.
  auto perm = gt;
  for (auto& v : perm.voxels) v = v == 1 ? 77u : 5u;
  EXPECT_EQ(voi(gt, perm).total, 0.0);
  EXPECT_TRUE(voi(LabelVolume(Shape3{2, 2, 2}), LabelVolume(Shape3{2, 2, 2})).empty);
  EXPECT_THROW(voi(LabelVolume(Shape3{2, 2, 2}), LabelVolume(Shape3{2, 2, 3})), Error);
}

TEST(AdaptedRand, MatchesPairCountingOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto gt = random_labels(Shape3{4, 5, 6}, 3, seed), pred = random_labels(Shape3{4, 5, 6}, 4, seed + 50);
    EXPECT_NEAR(adapted_rand(gt, pred).error, arand_oracle(gt, pred), 1e-12);
  }
  const auto gt = blocks(Shape3{2, 2, 8}, {4, 4});
  EXPECT_EQ(adapted_rand(gt, gt).error, 0.0);
  const auto r = adapted_rand(gt, blocks(Shape3{2, 2, 8}, {8}));
  EXPECT_NEAR(r.precision, 0.5, 1e-12);
  EXPECT_NEAR(r.recall, 1.0, 1e-12);
  EXPECT_NEAR(r.error, 1.0 - 2.0 * 0.5 / 1.5, 1e-12);
}

TEST(Ap75, MatchesExhaustiveAssignment) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng = make_stream({seed, 0x4150ull});
    std::vector<int> w;
    for (int x = 0; x < 24;) {
      w.push_back(std::min(24 - x, uniform_int(rng, 1, 6)));
      x += w.back();
    }
    const auto gt = blocks(Shape3{2, 2, 24}, w);
    auto pred = gt;
    for (auto& v : pred.voxels)
      if (bernoulli(rng, 0.15)) v = static_cast<std::uint32_t>(uniform_int(rng, 0, 9));
    const auto r = ap75_stratified(gt, pred);
    EXPECT_EQ(r.overall.tp, ap_tp_oracle(gt, pred)) << seed;
    EXPECT_EQ(r.overall.tp + r.overall.fn, w.size());
  }
}

TEST(Ap75, StrictThresholdAndCounts) {
  // gt instance of 4 voxels; prediction covers 3 of them plus nothing else: IoU 0.75 is not a match.
  LabelVolume gt(Shape3{1, 1, 4}, 1), pred(Shape3{1, 1, 4}, 1);
  pred.voxels[3] = 0;
  auto r = ap75_stratified(gt, pred);
  EXPECT_EQ(r.overall.tp, 0u);
  EXPECT_EQ(r.overall.fn, 1u);
  EXPECT_EQ(r.overall.fp, 1u);
  EXPECT_DOUBLE_EQ(*r.overall.ap(), 0.0);
  EXPECT_DOUBLE_EQ(*ap75_stratified(gt, gt).overall.ap(), 1.0);
  EXPECT_FALSE(ap75_stratified(LabelVolume(Shape3{1, 1, 4}), LabelVolume(Shape3{1, 1, 4})).overall.ap().has_value());
}

TEST(Ap75, StratumBoundaries) {
  EXPECT_EQ(stratum_of(4999), SizeStratum::small);
  EXPECT_EQ(stratum_of(5000), SizeStratum::medium);
  EXPECT_EQ(stratum_of(14999), SizeStratum::medium);
  EXPECT_EQ(stratum_of(15000), SizeStratum::large);
  // Three instances, one per stratum, in a 1 x 1 x 34998 strip.
  const auto gt = blocks(Shape3{1, 1, 34998}, {4999, 14999, 15000});
  auto pred = gt;
  std::fill(pred.voxels.begin() + 4999, pred.voxels.begin() + 19998, 0u);  // miss the medium one entirely
  const auto r = ap75_stratified(gt, pred);
  EXPECT_EQ(r.strata[0].tp, 1u);
  EXPECT_EQ(r.strata[1].gt_instances, 1u);
  EXPECT_EQ(r.strata[1].fn, 1u);
  EXPECT_EQ(r.strata[2].tp, 1u);
  EXPECT_EQ(r.strata[2].fp, 0u);
  EXPECT_DOUBLE_EQ(*r.overall.ap(), 2.0 / 3.0);
}

TEST(Metrics, ReportJsonAndTable) {
  const auto gt = blocks(Shape3{2, 2, 8}, {4, 4});
  const auto rep = evaluate_segmentation(gt, gt);
  const auto j = rep.to_json();
  EXPECT_EQ(j["voi_total"], 0.0);
  EXPECT_EQ(j["arand_error"], 0.0);
  EXPECT_EQ(j["ap75"], 1.0);
  EXPECT_TRUE(j["strata"]["large"]["ap75"].is_null());
  EXPECT_NE(rep.table().find("ap75_small"), std::string::npos);
}
