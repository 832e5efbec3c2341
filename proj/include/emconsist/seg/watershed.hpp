#pragma once

// Seeded watershed on a nearest-neighbour affinity graph.

#include <algorithm>
#include <numeric>
#include <queue>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "emconsist/seg/affinity.hpp"

namespace emc {

struct WatershedParams {
  double seed_threshold = 0.9;
  double boundary_threshold = 0.05;

  void validate() const {
    require(seed_threshold > 0.0 && seed_threshold < 1.0, ErrorKind::validation, "seed threshold must lie in (0, 1)");
    require(boundary_threshold > 0.0 && boundary_threshold < 1.0, ErrorKind::validation,
            "boundary threshold must lie in (0, 1)");
  }
};

class UnionFind {
 public:
  explicit UnionFind(std::size_t n = 0) : parent_(n), rank_(n, 0) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  /// Returns the surviving root.
  std::size_t unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return a;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
    return a;
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<unsigned char> rank_;
};

namespace detail {

/// Calls fn(neighbour, affinity) for the up to six face neighbours of voxel i.
template <class Fn>
void for_each_edge(const AffinityMap& aff, std::size_t i, Fn&& fn) {
  const Shape3& s = aff.shape;
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  const int z = static_cast<int>(i / plane), y = static_cast<int>((i / s.w) % s.h), x = static_cast<int>(i % s.w);
  const Index3 p{z, y, x};
  for (int a = 0; a < 3; ++a) {
    const std::size_t st = axis_stride(s, a);
    if (p[static_cast<std::size_t>(a)] > 0) fn(i - st, aff.at(a, i));
    if (p[static_cast<std::size_t>(a)] + 1 < s[a]) fn(i + st, aff.at(a, i + st));
  }
}

/// Renumbers nonzero labels to 1..K in order of first appearance.
inline std::size_t relabel_sequential(std::vector<std::uint32_t>& labels) {
  std::uint32_t next = 0;
  std::unordered_map<std::uint32_t, std::uint32_t> ids;
  for (auto& l : labels) {
    if (l == 0) continue;
    auto [it, inserted] = ids.emplace(l, next + 1);
    if (inserted) ++next;
    l = it->second;
  }
  return next;
}

}  // namespace detail

/// Seeds are connected components (through edges >= seed_threshold) of voxels whose strongest
/// incident affinity reaches seed_threshold. Other voxels join the seed reached through the
/// highest-affinity path edge, using only edges >= boundary_threshold; unreachable voxels stay 0.
inline LabelVolume watershed_fragments(const AffinityMap& aff, const WatershedParams& params) {
  params.validate();
  const Shape3 s = aff.shape;
  const std::size_t n = s.size();
  const float seed_t = static_cast<float>(params.seed_threshold);
  const float bound_t = static_cast<float>(params.boundary_threshold);

  UnionFind uf(n);
  std::vector<unsigned char> is_seed(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    detail::for_each_edge(aff, i, [&](std::size_t j, float a) {
      if (a >= seed_t) {
        is_seed[i] = 1;
        uf.unite(i, j);
      }
    });

  LabelVolume out(s);
  std::vector<std::uint32_t> root_label(n, 0);
  std::uint32_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_seed[i]) continue;
    const std::size_t r = uf.find(i);
    if (root_label[r] == 0) root_label[r] = ++next;
    out.voxels[i] = root_label[r];
  }

  // Max-heap on affinity; ties resolved by smaller target, then smaller source voxel index.
  using Item = std::tuple<float, std::size_t, std::size_t>;  // (affinity, target, source)
  auto cmp = [](const Item& a, const Item& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) > std::get<1>(b);
    return std::get<2>(a) > std::get<2>(b);
  };
  std::priority_queue<Item, std::vector<Item>, decltype(cmp)> heap(cmp);
  auto push_edges = [&](std::size_t i) {
    detail::for_each_edge(aff, i, [&](std::size_t j, float a) {
      if (out.voxels[j] == 0 && a >= bound_t) heap.emplace(a, j, i);
    });
  };
  for (std::size_t i = 0; i < n; ++i)
    if (out.voxels[i] != 0) push_edges(i);
  while (!heap.empty()) {
    const auto [a, j, i] = heap.top();
    heap.pop();
    if (out.voxels[j] != 0) continue;
    out.voxels[j] = out.voxels[i];
    push_edges(j);
  }
  return out;
}

}  // namespace emc
