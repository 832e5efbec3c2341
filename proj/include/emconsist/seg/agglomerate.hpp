#pragma once

// Greedy region agglomeration over the fragment adjacency graph. The score of an edge is the
// mean affinity of all voxel pairs on the boundary between two regions; after a merge the
// boundary statistics of the merged region are summed, so its scores stay exact means.

#include <cstdint>
#include <map>
#include <queue>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "emconsist/seg/affinity.hpp"
#include "emconsist/seg/watershed.hpp"

namespace emc {

struct BoundaryStat {
  double sum = 0.0;
  std::uint64_t count = 0;
  double score() const { return count ? sum / static_cast<double>(count) : 0.0; }
  BoundaryStat& operator+=(const BoundaryStat& o) {
    sum += o.sum;
    count += o.count;
    return *this;
  }
};

struct FragmentEdge {
  std::uint32_t a = 0, b = 0;  // a < b
  BoundaryStat stat;
};

struct FragmentGraph {
  LabelVolume fragments;
  std::uint32_t fragment_count = 0;  // ids 1..fragment_count
  std::vector<FragmentEdge> edges;   // sorted by (a, b)
};

/// Region adjacency with per-edge affinity statistics over every face-adjacent voxel pair
/// whose fragments differ (background voxels excluded).
inline FragmentGraph build_fragment_graph(LabelVolume fragments, const AffinityMap& aff) {
  require(fragments.shape == aff.shape, ErrorKind::validation, "fragments and affinities differ in shape");
  FragmentGraph g;
  std::uint32_t maxid = 0;
  for (auto l : fragments.voxels) maxid = std::max(maxid, l);
  g.fragment_count = maxid;
  std::map<std::pair<std::uint32_t, std::uint32_t>, BoundaryStat> stats;
  const Shape3 s = fragments.shape;
  for (int a = 0; a < 3; ++a) {
    const std::size_t st = axis_stride(s, a);
    for (int z = 0; z < s.d; ++z)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          if (!has_lower({z, y, x}, a)) continue;
          const std::size_t i = s.index(z, y, x);
          const std::uint32_t p = fragments.voxels[i], q = fragments.voxels[i - st];
          if (p == 0 || q == 0 || p == q) continue;
          BoundaryStat& b = stats[{std::min(p, q), std::max(p, q)}];
          b.sum += aff.at(a, i);
          b.count += 1;
        }
  }
  for (const auto& [k, v] : stats) g.edges.push_back({k.first, k.second, v});
  g.fragments = std::move(fragments);
  return g;
}

struct SegmentationResult {
  LabelVolume labels;
  double threshold = 0.0;
  std::size_t fragments = 0;
  std::size_t segments = 0;
  std::size_t merges = 0;

  nlohmann::json to_json() const {
    return {{"threshold", threshold}, {"fragments", fragments}, {"segments", segments}, {"merges", merges}};
  }
};

/// Sequence of merges performed when agglomerating to `threshold`: highest score first, ties
/// broken by the smaller region pair. Merging stops once the best score is below threshold.
/// The returned pairs are (surviving id, absorbed id).
inline std::vector<std::pair<std::uint32_t, std::uint32_t>> agglomeration_merges(const FragmentGraph& g,
                                                                                 double threshold) {
  const std::size_t n = static_cast<std::size_t>(g.fragment_count) + 1;
  std::vector<std::map<std::uint32_t, BoundaryStat>> adj(n);
  using Item = std::tuple<double, std::uint32_t, std::uint32_t>;
  auto cmp = [](const Item& x, const Item& y) {
    if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) < std::get<0>(y);
    if (std::get<1>(x) != std::get<1>(y)) return std::get<1>(x) > std::get<1>(y);
    return std::get<2>(x) > std::get<2>(y);
  };
  std::priority_queue<Item, std::vector<Item>, decltype(cmp)> heap(cmp);
  for (const auto& e : g.edges) {
    adj[e.a][e.b] += e.stat;
    adj[e.b][e.a] += e.stat;
  }
  for (std::uint32_t a = 1; a < n; ++a)
    for (const auto& [b, st] : adj[a])
      if (a < b) heap.emplace(st.score(), a, b);

  std::vector<std::pair<std::uint32_t, std::uint32_t>> merges;
  while (!heap.empty()) {
    const auto [score, a, b] = heap.top();
    if (score < threshold) break;
    heap.pop();
    auto it = adj[a].find(b);
    if (it == adj[a].end() || it->second.score() != score) continue;  // stale entry
    // a < b: a survives, b's boundaries are folded into a.
    adj[a].erase(b);
    adj[b].erase(a);
    for (const auto& [c, st] : adj[b]) {
      adj[c].erase(b);
      BoundaryStat& m = adj[a][c];
      m += st;
      adj[c][a] = m;
    }
    adj[b].clear();
    for (const auto& [c, st] : adj[a]) heap.emplace(st.score(), std::min(a, c), std::max(a, c));
    merges.emplace_back(a, b);
  }
  return merges;
}

inline SegmentationResult agglomerate(const FragmentGraph& g, double threshold) {
  require(threshold >= 0.0 && threshold <= 1.0, ErrorKind::validation, "agglomeration threshold must lie in [0, 1]");
  const auto merges = agglomeration_merges(g, threshold);
  UnionFind uf(static_cast<std::size_t>(g.fragment_count) + 1);
  std::vector<std::uint32_t> root(static_cast<std::size_t>(g.fragment_count) + 1);
  for (const auto& [a, b] : merges) uf.unite(a, b);
  for (std::uint32_t i = 0; i <= g.fragment_count; ++i) root[i] = static_cast<std::uint32_t>(uf.find(i));
  SegmentationResult r;
  r.threshold = threshold;
  r.labels = g.fragments;
  for (auto& l : r.labels.voxels)
    if (l != 0) l = root[l];
  r.segments = detail::relabel_sequential(r.labels.voxels);
  r.fragments = 0;
  {
    std::vector<unsigned char> present(static_cast<std::size_t>(g.fragment_count) + 1, 0);
    for (auto l : g.fragments.voxels) present[l] = 1;
    for (std::size_t i = 1; i < present.size(); ++i) r.fragments += present[i];
  }
  r.merges = merges.size();
  return r;
}

}  // namespace emc
