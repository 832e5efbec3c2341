#include <gtest/gtest.h>

#include <map>
#include <set>

#include "fixtures.hpp"

using namespace emc;

namespace {

/// Blocks of width `w` along x, labels 1..k.
LabelVolume slabs(Shape3 s, int w) {
  LabelVolume l(s);
  for (int z = 0; z < s.d; ++z)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) l.at(z, y, x) = static_cast<std::uint32_t>(x / w + 1);
  return l;
}

/// True when a and b induce the same partition of the foreground (and agree on background).
bool same_partition(const LabelVolume& a, const LabelVolume& b) {
  std::map<std::uint32_t, std::uint32_t> ab, ba;
  for (std::size_t i = 0; i < a.voxels.size(); ++i) {
    const auto x = a.voxels[i], y = b.voxels[i];
    if ((x == 0) != (y == 0)) return false;
    if (x == 0) continue;
    if (ab.emplace(x, y).first->second != y || ba.emplace(y, x).first->second != x) return false;
  }
  return true;
}

FragmentGraph graph(std::uint32_t n, const std::vector<std::tuple<std::uint32_t, std::uint32_t, double, int>>& edges) {
  FragmentGraph g;
  g.fragment_count = n;
  g.fragments = LabelVolume(Shape3{1, 1, static_cast<int>(n)});
  for (std::uint32_t i = 0; i < n; ++i) g.fragments.voxels[i] = i + 1;
  for (const auto& [a, b, score, count] : edges) g.edges.push_back({a, b, {score * count, static_cast<std::uint64_t>(count)}});
  return g;
}

/// Reference agglomeration on explicit region sets: repeatedly merge the pair with the
/// highest count-weighted mean score while it is >= threshold.
std::vector<std::set<std::uint32_t>> reference_agglomerate(const FragmentGraph& g, double threshold) {
  std::vector<std::set<std::uint32_t>> regions;
  for (std::uint32_t i = 1; i <= g.fragment_count; ++i) regions.push_back({i});
  auto between = [&](const std::set<std::uint32_t>& r, const std::set<std::uint32_t>& s) {
    double sum = 0;
    std::uint64_t cnt = 0;
    for (const auto& e : g.edges)
      if ((r.count(e.a) && s.count(e.b)) || (r.count(e.b) && s.count(e.a))) {
        sum += e.stat.sum;
        cnt += e.stat.count;
      }
    return std::pair<double, std::uint64_t>(cnt ? sum / cnt : 0.0, cnt);
  };
  for (;;) {
    double best = -1;
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < regions.size(); ++i)
      for (std::size_t j = i + 1; j < regions.size(); ++j) {
        const auto [score, cnt] = between(regions[i], regions[j]);
        if (cnt == 0) continue;
        if (score > best) {
          best = score;
          bi = i;
          bj = j;
        }
      }
    if (best < threshold) break;
    regions[bi].insert(regions[bj].begin(), regions[bj].end());
    regions.erase(regions.begin() + static_cast<std::ptrdiff_t>(bj));
  }
  return regions;
}

std::set<std::set<std::uint32_t>> partition_of(const FragmentGraph& g, const SegmentationResult& r) {
  std::map<std::uint32_t, std::set<std::uint32_t>> by;
  for (std::size_t i = 0; i < g.fragments.voxels.size(); ++i) by[r.labels.voxels[i]].insert(g.fragments.voxels[i]);
  std::set<std::set<std::uint32_t>> out;
  for (auto& [k, v] : by) out.insert(v);
  return out;
}

}  // namespace

TEST(Affinities, MatchNeighbourOracle) {
  const auto s = emc::testing::synth(5, 16);
  const AffinityMap aff = labels_to_affinities(s.labels);
  const Shape3 sh = s.labels.shape;
  const Index3 off[3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  for (int a = 0; a < 3; ++a)
    for (int z = 0; z < sh.d; ++z)
      for (int y = 0; y < sh.h; ++y)
        for (int x = 0; x < sh.w; ++x) {
          const int pz = z - off[a][0], py = y - off[a][1], px = x - off[a][2];
          float expect = 0.0f;
          if (pz >= 0 && py >= 0 && px >= 0) {
            const auto l = s.labels.at(z, y, x);
            expect = (l != 0 && l == s.labels.at(pz, py, px)) ? 1.0f : 0.0f;
          }
          ASSERT_EQ(aff.at(a, sh.index(z, y, x)), expect);
        }
}

TEST(Affinities, SplitPlaneIsZeroOnlyAcrossTheCut) {
  const Shape3 s{4, 5, 12};
  const AffinityMap aff = labels_to_affinities(slabs(s, 6));
  for (int z = 0; z < s.d; ++z)
    for (int y = 0; y < s.h; ++y)
      for (int x = 1; x < s.w; ++x) EXPECT_EQ(aff.at(2, s.index(z, y, x)), x == 6 ? 0.0f : 1.0f);
  EXPECT_EQ(aff.at(0, s.index(0, 2, 3)), 0.0f);
  EXPECT_EQ(aff.at(0, s.index(1, 2, 3)), 1.0f);
  const AffinityMap bg = labels_to_affinities(LabelVolume(s));
  for (float v : bg.values) EXPECT_EQ(v, 0.0f);
}

TEST(Watershed, PerfectAffinitiesRecoverInstances) {
  for (int k : {1, 2, 3, 6}) {
    const Shape3 s{6, 6, 6 * k};
    const LabelVolume gt = slabs(s, 6);
    const LabelVolume frag = watershed_fragments(labels_to_affinities(gt), {0.9, 0.05});
    EXPECT_TRUE(same_partition(gt, frag)) << k;
    SegmentParams p;
    EXPECT_TRUE(same_partition(gt, segment_affinities(labels_to_affinities(gt), p).labels)) << k;
  }
  const auto s = emc::testing::synth(9, 24);
  const auto seg = segment_affinities(labels_to_affinities(s.labels), SegmentParams{});
  EXPECT_TRUE(same_partition(s.labels, seg.labels));
  EXPECT_EQ(voi(s.labels, seg.labels).total, 0.0);
}

TEST(Watershed, ZeroAffinitiesLeaveEverythingUnlabeled) {
  const LabelVolume frag = watershed_fragments(AffinityMap(Shape3{5, 5, 5}), {0.9, 0.05});
  for (auto v : frag.voxels) EXPECT_EQ(v, 0u);
}

TEST(Watershed, SingleStrongBridgeJoinsTwoSlabs) {
  const Shape3 s{4, 4, 8};
  AffinityMap aff = labels_to_affinities(slabs(s, 4));
  aff.at(2, s.index(1, 1, 4)) = 1.0f;
  const LabelVolume frag = watershed_fragments(aff, {0.9, 0.05});
  std::set<std::uint32_t> ids(frag.voxels.begin(), frag.voxels.end());
  EXPECT_EQ(ids, (std::set<std::uint32_t>{1}));
}

TEST(Watershed, ThresholdsMustLieStrictlyInsideUnitInterval) {
  EXPECT_THROW(watershed_fragments(AffinityMap(Shape3{2, 2, 2}), {1.0, 0.05}), Error);
  EXPECT_THROW(watershed_fragments(AffinityMap(Shape3{2, 2, 2}), {0.9, 0.0}), Error);
}

TEST(Agglomeration, ThreeFragmentWorkedExample) {
  const auto g = graph(3, {{1, 2, 0.9, 1}, {2, 3, 0.6, 1}, {1, 3, 0.2, 1}});
  // After {1,2} merge the boundary to 3 scores (0.6 + 0.2) / 2 = 0.4.
  EXPECT_EQ(agglomerate(g, 0.5).segments, 2u);
  EXPECT_EQ(agglomerate(g, 0.4).segments, 1u);
  EXPECT_EQ(agglomerate(g, 0.95).segments, 3u);
  EXPECT_EQ(agglomerate(g, 1.0).merges, 0u);
  const auto m = agglomeration_merges(g, 0.0);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0], (std::pair<std::uint32_t, std::uint32_t>{1, 2}));
  EXPECT_EQ(m[1], (std::pair<std::uint32_t, std::uint32_t>{1, 3}));
}

TEST(Agglomeration, MatchesReferenceOnRandomGraphs) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng = make_stream({seed, 0x4147ull});
    const auto n = static_cast<std::uint32_t>(uniform_int(rng, 2, 7));
    std::vector<std::tuple<std::uint32_t, std::uint32_t, double, int>> edges;
    for (std::uint32_t a = 1; a <= n; ++a)
      for (std::uint32_t b = a + 1; b <= n; ++b)
        if (bernoulli(rng, 0.6)) edges.emplace_back(a, b, uniform(rng, 0.0, 1.0), uniform_int(rng, 1, 5));
    const auto g = graph(n, edges);
    for (double t : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      std::set<std::set<std::uint32_t>> expect;
      for (const auto& r : reference_agglomerate(g, t)) expect.insert(r);
      EXPECT_EQ(partition_of(g, agglomerate(g, t)), expect) << "seed " << seed << " t " << t;
    }
  }
}

TEST(Agglomeration, SegmentCountIsMonotoneInThreshold) {
  const auto s = emc::testing::synth(4, 24);
  AffinityMap aff = labels_to_affinities(s.labels);
  Rng rng = make_stream({4});
  for (float& v : aff.values) v = std::clamp(v + static_cast<float>(normal(rng, 0.0, 0.2)), 0.0f, 1.0f);
  const auto g = build_fragment_graph(watershed_fragments(aff, {0.9, 0.05}), aff);
  std::size_t prev = 0;
  for (double t = 0.0; t <= 1.0001; t += 0.1) {
    const auto r = agglomerate(g, std::min(t, 1.0));
    EXPECT_GE(r.segments, prev);
    EXPECT_EQ(r.fragments - r.merges, r.segments);
    prev = r.segments;
  }
  EXPECT_THROW(agglomerate(g, 1.5), Error);
}

TEST(Windows, StartsAndCoverage) {
  EXPECT_EQ(window_starts(64, 32, 16), (std::vector<int>{0, 16, 32}));
  EXPECT_EQ(window_starts(48, 32, 16), (std::vector<int>{0, 16}));
  EXPECT_EQ(window_starts(40, 32, 16), (std::vector<int>{0, 8}));
  EXPECT_EQ(window_starts(32, 32, 16), (std::vector<int>{0}));
  EXPECT_THROW(window_starts(16, 32, 16), Error);
  // Per-voxel coverage along one axis for 64/32/16: 1, 2, 2, 1 in blocks of 16.
  std::vector<int> cover(64, 0);
  for (int o : window_starts(64, 32, 16))
    for (int i = 0; i < 32; ++i) cover[o + i] += 1;
  for (int i = 0; i < 64; ++i) EXPECT_EQ(cover[i], (i < 16 || i >= 48) ? 1 : 2) << i;
}

TEST(Finetune, ZeroIterationsKeepsInitialization) {
  const auto data = emc::testing::labeled(1, 1, Shape3::cube(16));
  auto cfg = emc::testing::tiny_finetune(0);
  const Checkpoint c = finetune_model(cfg, data, std::nullopt);
  EXPECT_EQ(c.step, 0u);
  EXPECT_EQ(c.params.values, init_parameters<float>(segmentation_layout(cfg.backbone), cfg.seed).values);
}

TEST(Finetune, PretrainedBackboneIsCopiedBitExactly) {
  const auto data = emc::testing::labeled(1, 1, Shape3::cube(16));
  Pretrainer pre(emc::testing::tiny_pretrain(1), emc::testing::unlabeled(2, 1, Shape3::cube(16)));
  pre.step_once();
  const Checkpoint pc = pre.checkpoint();
  Finetuner ft(emc::testing::tiny_finetune(0), data, pc);
  std::size_t backbone_entries = 0;
  for (const auto& e : ft.params().layout.entries()) {
    if (e.name.rfind("backbone.", 0) != 0) continue;
    ++backbone_entries;
    const auto src = pc.params.span(e.name), dst = ft.params().span(e.name);
    ASSERT_TRUE(std::equal(src.begin(), src.end(), dst.begin(), dst.end())) << e.name;
  }
  EXPECT_EQ(ft.transferred(), backbone_entries);
  EXPECT_GT(backbone_entries, 0u);
  auto other = emc::testing::tiny_finetune(0);
  other.backbone.channels = {2, 3, 5};
  EXPECT_THROW(Finetuner(other, data, pc), Error);
}

TEST(Finetune, AffinityLossDecreases) {
  const auto data = emc::testing::labeled(1, 2, Shape3::cube(16));
  auto cfg = emc::testing::tiny_finetune(60);
  cfg.flips = false;
  std::vector<double> l;
  finetune_model(cfg, data, std::nullopt, [&](std::uint64_t, double v) { l.push_back(v); });
  ASSERT_EQ(l.size(), 60u);
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += l[i];
    last += l[50 + i];
  }
  EXPECT_LT(last, first);
}

TEST(Predictor, OutputRangeAndBorderConvention) {
  const auto data = emc::testing::labeled(1, 1, Shape3::cube(16));
  const Checkpoint c = finetune_model(emc::testing::tiny_finetune(1), data, std::nullopt);
  const AffinityPredictor model(c);
  auto s = emc::testing::synth(3, 24);
  normalize(s.volume);
  const AffinityMap aff = model.predict(s.volume, 8);
  const Shape3 sh = s.volume.shape;
  for (int a = 0; a < 3; ++a)
    for (int z = 0; z < sh.d; ++z)
      for (int y = 0; y < sh.h; ++y)
        for (int x = 0; x < sh.w; ++x) {
          const float v = aff.at(a, sh.index(z, y, x));
          if (!has_lower({z, y, x}, a)) ASSERT_EQ(v, 0.0f);
          else ASSERT_TRUE(v > 0.0f && v < 1.0f);
        }
  EXPECT_EQ(model.predict(s.volume, 8).values, aff.values);
  Checkpoint wrong = c;
  wrong.kind = "pretrain";
  EXPECT_THROW(AffinityPredictor{wrong}, Error);
}
