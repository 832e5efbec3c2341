#pragma once

// Small synthetic datasets and configurations shared by the tests.

#include <filesystem>
#include <string>
#include <vector>

#include "emconsist/core/synth.hpp"
#include "emconsist/train/ablation.hpp"

namespace emc::testing {

inline SynthSample synth(std::uint64_t seed, int extent = 32, int min_instances = 3, int max_instances = 6) {
  SynthSpec s;
  s.seed = seed;
  s.shape = Shape3::cube(extent);
  s.min_instances = min_instances;
  s.max_instances = max_instances;
  return synth_volume(s);
}

inline Dataset unlabeled(std::uint64_t first_seed, int count, Shape3 patch, int extent = 32) {
  std::vector<Volume> v;
  for (int i = 0; i < count; ++i) {
    auto s = synth(first_seed + static_cast<std::uint64_t>(i), extent);
    normalize(s.volume);
    v.push_back(std::move(s.volume));
  }
  return Dataset(std::move(v), patch);
}

inline Dataset labeled(std::uint64_t first_seed, int count, Shape3 patch, int extent = 32) {
  std::vector<Volume> v;
  std::vector<LabelVolume> l;
  for (int i = 0; i < count; ++i) {
    auto s = synth(first_seed + static_cast<std::uint64_t>(i), extent);
    normalize(s.volume);
    v.push_back(std::move(s.volume));
    l.push_back(std::move(s.labels));
  }
  return Dataset(std::move(v), patch, std::move(l));
}

inline BackboneConfig tiny_backbone(int patch = 16) {
  BackboneConfig c;
  c.patch = Shape3::cube(patch);
  c.channels = {2, 3, 4};
  return c;
}

inline PretrainConfig tiny_pretrain(int iterations = 3) {
  PretrainConfig c;
  c.iterations = iterations;
  c.backbone = tiny_backbone();
  c.objective.tokens.dim = 8;
  c.objective.tokens.adapter_channels = 2;
  c.objective.sim.hidden = 4;
  return c;
}

inline FinetuneConfig tiny_finetune(int iterations = 3) {
  FinetuneConfig c;
  c.iterations = iterations;
  c.backbone = tiny_backbone();
  c.optimizer.lr = 1e-3;
  return c;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("emconsist_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace emc::testing
