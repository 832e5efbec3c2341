#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "emconsist/core/error.hpp"
#include "emconsist/core/rng.hpp"

namespace emc {

enum class Init {
  he_normal,      // N(0, 2/fan_in): convolutions followed by GELU
  fan_in_normal,  // N(0, 1/fan_in): linear maps and heads
  scaled_normal,  // N(0, 1/fan_in): attention matrices
  small_normal,   // N(0, 0.02^2): positional embeddings
  zeros,
  ones,
};

struct ParamEntry {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
  Init init = Init::zeros;
  int fan_in = 1;
};

/// Ordered, named slices of one flat parameter vector.
class ParamLayout {
 public:
  std::size_t add(const std::string& name, std::vector<int> shape, Init init, int fan_in = 1) {
    require(!index_.count(name), ErrorKind::validation, "duplicate parameter '" + name + "'");
    ParamEntry e;
    e.name = name;
    e.size = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                             [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
    e.shape = std::move(shape);
    e.offset = total_;
    e.init = init;
    e.fan_in = std::max(1, fan_in);
    total_ += e.size;
    index_[e.name] = entries_.size();
    entries_.push_back(std::move(e));
    return entries_.back().offset;
  }

  const ParamEntry& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::validation, "unknown parameter '" + name + "'");
    return entries_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t offset(const std::string& name) const { return at(name).offset; }
  std::size_t total() const noexcept { return total_; }
  const std::vector<ParamEntry>& entries() const noexcept { return entries_; }
  bool operator==(const ParamLayout& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name != o.entries_[i].name || entries_[i].shape != o.entries_[i].shape) return false;
    return true;
  }

 private:
  std::vector<ParamEntry> entries_;
  std::map<std::string, std::size_t> index_;
  std::size_t total_ = 0;
};

/// All learnable weights; both Siamese branches read the same instance.
template <class T>
struct ParameterSet {
  ParamLayout layout;
  std::vector<T> values;

  T* data(const std::string& name) { return values.data() + layout.offset(name); }
  const T* data(const std::string& name) const { return values.data() + layout.offset(name); }
  std::span<T> span(const std::string& name) {
    const auto& e = layout.at(name);
    return {values.data() + e.offset, e.size};
  }
  std::span<const T> span(const std::string& name) const {
    const auto& e = layout.at(name);
    return {values.data() + e.offset, e.size};
  }

  template <class U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    out.layout = layout;
    out.values.assign(values.begin(), values.end());
    return out;
  }
  bool operator==(const ParameterSet&) const = default;
};

/// Deterministic in (layout, seed): every entry draws from its own stream keyed by its position.
template <class T>
ParameterSet<T> init_parameters(const ParamLayout& layout, std::uint64_t seed, bool all_zero = false) {
  ParameterSet<T> p;
  p.layout = layout;
  p.values.assign(layout.total(), T(0));
  if (all_zero) return p;
  const auto& entries = layout.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const ParamEntry& e = entries[i];
    T* dst = p.values.data() + e.offset;
    double stddev = 0.0;
    switch (e.init) {
      case Init::zeros: continue;
      case Init::ones:
        std::fill(dst, dst + e.size, T(1));
        continue;
      case Init::he_normal: stddev = std::sqrt(2.0 / e.fan_in); break;
      case Init::fan_in_normal:
      case Init::scaled_normal: stddev = std::sqrt(1.0 / e.fan_in); break;
      case Init::small_normal: stddev = 0.02; break;
    }
    Rng rng = make_stream({seed, static_cast<std::uint64_t>(i), 0x494e4954ull});
    std::normal_distribution<double> dist(0.0, stddev);
    for (std::size_t k = 0; k < e.size; ++k) dst[k] = static_cast<T>(dist(rng));
  }
  return p;
}

}  // namespace emc
