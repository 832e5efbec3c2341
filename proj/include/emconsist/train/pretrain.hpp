#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emconsist/augment/augment.hpp"
#include "emconsist/core/config_reader.hpp"
#include "emconsist/core/dataset.hpp"
#include "emconsist/core/parallel.hpp"
#include "emconsist/loss/objective.hpp"
#include "emconsist/nn/checkpoint.hpp"
#include "emconsist/train/adam.hpp"

namespace emc {

struct PretrainConfig {
  int iterations = 2000;
  int batch_size = 2;
  std::uint64_t seed = 0;
  int checkpoint_interval = 0;  // 0: final checkpoint only
  std::string manifest;         // dataset manifest, relative paths resolved against the config file
  AdamConfig optimizer;
  ObjectiveConfig objective;
  BackboneConfig backbone;
  WeakAugmentSpec weak;
  StrongAugmentSpec strong;

  void validate() const {
    require(iterations >= 1, ErrorKind::validation, "iterations must be >= 1");
    require(batch_size >= 1, ErrorKind::validation, "batch_size must be >= 1");
    require(checkpoint_interval >= 0, ErrorKind::validation, "checkpoint_interval must be >= 0");
    optimizer.validate();
    objective.validate();
    backbone.validate();
    weak.validate(backbone.patch);
    strong.validate();
  }

  nlohmann::json to_json() const {
    return {{"iterations", iterations},
            {"batch_size", batch_size},
            {"seed", seed},
            {"checkpoint_interval", checkpoint_interval},
            {"manifest", manifest},
            {"optimizer", optimizer.to_json()},
            {"objective", objective.to_json()},
            {"backbone", backbone.to_json()},
            {"augment", {{"weak", weak.to_json()}, {"strong", strong.to_json()}}}};
  }

  void read(ConfigReader& r) {
    r.get("iterations", iterations);
    r.get("batch_size", batch_size);
    r.get("seed", seed);
    r.get("checkpoint_interval", checkpoint_interval);
    r.get("manifest", manifest);
    r.check(iterations >= 1, "iterations", "must be >= 1");
    r.check(batch_size >= 1, "batch_size", "must be >= 1");
    r.check(checkpoint_interval >= 0, "checkpoint_interval", "must be >= 0");
    {
      ConfigReader c = r.child("optimizer");
      optimizer.read(c);
    }
    {
      ConfigReader c = r.child("objective");
      objective.read(c);
    }
    {
      ConfigReader c = r.child("backbone");
      backbone.read(c);
    }
    {
      ConfigReader a = r.child("augment");
      {
        ConfigReader c = a.child("weak");
        weak.read(c);
      }
      {
        ConfigReader c = a.child("strong");
        strong.read(c);
      }
      a.finish();
    }
    r.finish();
  }

  static PretrainConfig from_json(const nlohmann::json& j) {
    std::vector<std::string> errors;
    PretrainConfig c;
    {
      ConfigReader r(j, "", errors);
      c.read(r);
    }
    throw_if_errors(errors, "pretrain config");
    c.validate();
    return c;
  }
};

/// Stream tags keep per-step randomness independent of how work is scheduled.
enum class StreamTag : std::uint64_t { sample = 0x53414d50, channels = 0x4348414e, finetune = 0x46494e45 };

inline std::string format_loss(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", *v);
  return buf;
}

inline std::string loss_csv_header() { return "step,l_r,l_cross,l_sim,l_total"; }

inline std::string loss_csv_row(std::uint64_t step, const LossBreakdown& l) {
  return std::to_string(step) + "," + format_loss(l.l_r) + "," + format_loss(l.l_cross) + "," + format_loss(l.l_sim) +
         "," + format_loss(l.l_total);
}

/// One optimizer step: forward both branches with the shared parameters, backward, Adam.
template <class T>
LossBreakdown train_step(const SiameseObjective<T>& objective, std::vector<T>& params, AdamState<T>& adam,
                         const SiameseBatch<T>& batch, const std::vector<int>& channels, const AdamConfig& opt) {
  std::vector<T> grad(params.size(), T(0));
  LossBreakdown out = objective.evaluate(params.data(), batch, channels, &grad);
  adam_step(params, std::move(grad), adam, opt);
  return out;
}

class Pretrainer {
 public:
  Pretrainer(PretrainConfig cfg, Dataset data)
      : cfg_(std::move(cfg)), data_(std::move(data)), layout_(pretrain_layout(cfg_.backbone, cfg_.objective)),
        objective_(cfg_.backbone, cfg_.objective, layout_), params_(init_parameters<float>(layout_, cfg_.seed).values),
        adam_(layout_.total()) {
    cfg_.validate();
    require(data_.patch_shape() == cfg_.backbone.patch, ErrorKind::config,
            "dataset patch shape " + data_.patch_shape().str() + " differs from backbone patch " +
                cfg_.backbone.patch.str());
  }

  const PretrainConfig& config() const noexcept { return cfg_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  const SiameseObjective<float>& objective() const noexcept { return objective_; }
  const std::vector<float>& params() const noexcept { return params_; }
  std::uint64_t step() const noexcept { return adam_.step; }

  /// Batch for (1-based) step k; each element has its own stream.
  std::vector<AugmentedPair> make_pairs(std::uint64_t k) const {
    std::vector<AugmentedPair> pairs(static_cast<std::size_t>(cfg_.batch_size));
    parallel_for(cfg_.batch_size, [&](int b) {
      Rng rng = make_stream({cfg_.seed, k, static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(StreamTag::sample)});
      PatchSample s = data_.sample_patch(rng);
      pairs[b] = make_pair(s.patch, cfg_.weak, cfg_.strong, rng);
    });
    return pairs;
  }

  SiameseBatch<float> make_batch(std::uint64_t k) const {
    SiameseBatch<float> batch;
    for (const auto& p : make_pairs(k)) {
      batch.weak.push_back(to_tensor<float>(p.weak));
      batch.strong.push_back(to_tensor<float>(p.strong));
      batch.original.push_back(to_tensor<float>(p.original));
    }
    return batch;
  }

  std::vector<int> channels(std::uint64_t k) const {
    Rng rng = make_stream({cfg_.seed, k, static_cast<std::uint64_t>(StreamTag::channels)});
    return sample_sim_channels(rng, objective_.level_channels());
  }

  LossBreakdown step_once() {
    const std::uint64_t k = adam_.step + 1;
    try {
      return train_step(objective_, params_, adam_, make_batch(k), channels(k), cfg_.optimizer);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::training) throw;
      fail(ErrorKind::training, "step " + std::to_string(k) + ": " + e.detail());
    }
  }

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.kind = "pretrain";
    c.config = cfg_.to_json();
    c.params.layout = layout_;
    c.params.values = params_;
    c.adam = adam_;
    c.step = adam_.step;
    return c;
  }

  /// Restores parameters and optimizer state from a checkpoint of the same model.
  void restore(const Checkpoint& c) {
    require(c.kind == "pretrain", ErrorKind::config, "expected a pretrain checkpoint, got '" + c.kind + "'");
    require(c.params.layout == layout_, ErrorKind::config, "checkpoint parameter layout differs from the model");
    require(c.adam.has_value(), ErrorKind::config, "checkpoint has no optimizer state to resume from");
    params_ = c.params.values;
    adam_ = *c.adam;
  }

 private:
  PretrainConfig cfg_;
  Dataset data_;
  ParamLayout layout_;
  SiameseObjective<float> objective_;
  std::vector<float> params_;
  AdamState<float> adam_;
};

struct PretrainOutputs {
  std::filesystem::path final_checkpoint;
  std::filesystem::path loss_log;
  std::vector<LossBreakdown> losses;  // this run only
};

/// Trains up to cfg.iterations total steps, appending to <out>/losses.csv, writing periodic
/// checkpoints and <out>/final.ckpt.
inline PretrainOutputs run_pretrain(Pretrainer& trainer, const std::filesystem::path& out_dir,
                                    const std::function<void(std::uint64_t, const LossBreakdown&)>& on_step = {}) {
  std::filesystem::create_directories(out_dir);
  PretrainOutputs out;
  out.loss_log = out_dir / "losses.csv";
  const bool fresh = trainer.step() == 0;
  std::ofstream log(out.loss_log, fresh ? std::ios::trunc : std::ios::app);
  if (!log) fail(ErrorKind::io, "cannot open '" + out.loss_log.string() + "' for writing");
  if (fresh) log << loss_csv_header() << "\n";
  const auto& cfg = trainer.config();
  while (trainer.step() < static_cast<std::uint64_t>(cfg.iterations)) {
    LossBreakdown l = trainer.step_once();
    const std::uint64_t k = trainer.step();
    log << loss_csv_row(k, l) << "\n";
    out.losses.push_back(l);
    if (on_step) on_step(k, l);
    if (cfg.checkpoint_interval > 0 && k % static_cast<std::uint64_t>(cfg.checkpoint_interval) == 0 &&
        k != static_cast<std::uint64_t>(cfg.iterations)) {
      char name[48];
      std::snprintf(name, sizeof name, "step_%06llu.ckpt", static_cast<unsigned long long>(k));
      save_checkpoint(out_dir / name, trainer.checkpoint());
    }
  }
  log.flush();
  if (!log) fail(ErrorKind::io, "failed writing '" + out.loss_log.string() + "'");
  out.final_checkpoint = out_dir / "final.ckpt";
  save_checkpoint(out.final_checkpoint, trainer.checkpoint());
  return out;
}

}  // namespace emc
