#pragma once

// Subcommand implementations shared by the emconsist binary and the tests. Every run locks
// its output directory, writes resolved_config.json and appends one line to results.jsonl.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emconsist/core/config_reader.hpp"
#include "emconsist/core/dataset.hpp"
#include "emconsist/core/synth.hpp"
#include "emconsist/eval/metrics.hpp"
#include "emconsist/report/report.hpp"
#include "emconsist/seg/pipeline.hpp"
#include "emconsist/train/ablation.hpp"
#include "emconsist/train/pretrain.hpp"

namespace emc::cli {

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Config plumbing: file < --set overrides < dedicated flags.

/// Applies "a.b.c=value"; value is parsed as JSON and falls back to a plain string.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, ErrorKind::config,
          "override '" + assignment + "' must have the form key.path=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  std::string pointer;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    pointer += "/" + key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  j[nlohmann::json::json_pointer(pointer)] = value;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  nlohmann::json j = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (j.is_discarded()) fail(ErrorKind::config, path.string() + ": not valid JSON");
  return j;
}

/// Loaded config document with overrides applied and the schema version stripped.
struct ConfigDocument {
  nlohmann::json json = nlohmann::json::object();
  std::filesystem::path base_dir;  // relative paths inside the config resolve against this

  static ConfigDocument load(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& sets) {
    ConfigDocument d;
    if (file) {
      d.json = read_json_file(*file);
      d.base_dir = std::filesystem::absolute(*file).parent_path();
    } else {
      d.base_dir = std::filesystem::current_path();
    }
    require(d.json.is_object(), ErrorKind::config, "config root must be an object");
    for (const auto& s : sets) apply_override(d.json, s);
    if (d.json.contains("schema_version")) {
      const auto& v = d.json.at("schema_version");
      require(v.is_number_integer() && v.get<int>() == kSchemaVersion, ErrorKind::config,
              "schema_version must be " + std::to_string(kSchemaVersion));
      d.json.erase("schema_version");
    }
    return d;
  }

  std::string resolve(const std::string& p) const {
    if (p.empty()) return p;
    const std::filesystem::path path(p);
    return (path.is_absolute() ? path : base_dir / path).lexically_normal().string();
  }
};

template <class Config>
Config parse_config(const nlohmann::json& j, const char* what) {
  std::vector<std::string> errors;
  Config c;
  {
    ConfigReader r(j, "", errors);
    c.read(r);
  }
  throw_if_errors(errors, what);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Output directory handling.

/// Exclusive lock on an output directory, released on destruction.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir) : path_(dir / ".emconsist.lock") {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorKind::io, "cannot create output directory '" + dir.string() + "': " + ec.message());
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f)
      fail(ErrorKind::io, "output directory '" + dir.string() + "' is locked by another run (remove " +
                              path_.filename().string() + " if stale) or not writable");
    std::fclose(f);
  }
  ~OutputLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

inline void write_resolved_config(const std::filesystem::path& dir, const std::string& command,
                                  const nlohmann::json& config) {
  write_text_file(dir / "resolved_config.json",
                  nlohmann::json{{"schema_version", kSchemaVersion}, {"command", command}, {"config", config}}.dump(2) +
                      "\n");
}

inline void append_result(const std::filesystem::path& dir, const std::string& command, const nlohmann::json& config,
                          const nlohmann::json& summary) {
  const auto path = dir / "results.jsonl";
  std::ofstream out(path, std::ios::app);
  out << nlohmann::json{{"command", command}, {"config", config}, {"summary", summary}}.dump() << "\n";
  out.flush();
  if (!out) fail(ErrorKind::io, "failed writing '" + path.string() + "'");
}

using Progress = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// synth

struct SynthConfig {
  int count = 8;
  SynthSpec spec;
  Shape3 patch_shape = Shape3::cube(32);

  void validate() const {
    require(count >= 1, ErrorKind::validation, "count must be >= 1");
    spec.validate();
    require(spec.shape.contains(patch_shape), ErrorKind::validation,
            "patch_shape " + patch_shape.str() + " exceeds volume shape " + spec.shape.str());
  }

  nlohmann::json to_json() const {
    return {{"count", count},
            {"seed", spec.seed},
            {"shape", {spec.shape.d, spec.shape.h, spec.shape.w}},
            {"min_instances", spec.min_instances},
            {"max_instances", spec.max_instances},
            {"tube_fraction", spec.tube_fraction},
            {"noise_amplitude", spec.noise_amplitude},
            {"boundary_width", spec.boundary_width},
            {"patch_shape", {patch_shape.d, patch_shape.h, patch_shape.w}}};
  }

  void read(ConfigReader& r) {
    auto shape = [&](const char* key, Shape3& s) {
      std::vector<int> v;
      if (!r.get(key, v)) return;
      r.check(v.size() == 3, key, "must list 3 extents");
      if (v.size() == 3) s = {v[0], v[1], v[2]};
    };
    r.get("count", count);
    r.get("seed", spec.seed);
    shape("shape", spec.shape);
    r.get("min_instances", spec.min_instances);
    r.get("max_instances", spec.max_instances);
    r.get("tube_fraction", spec.tube_fraction);
    r.get("noise_amplitude", spec.noise_amplitude);
    r.get("boundary_width", spec.boundary_width);
    shape("patch_shape", patch_shape);
    r.check(count >= 1, "count", "must be >= 1");
    r.finish();
  }
};

inline std::string indexed_name(const char* stem, int i) {
  char b[64];
  std::snprintf(b, sizeof b, "%s_%03d.emv", stem, i);
  return b;
}

/// Writes volume_NNN.emv / labels_NNN.emv pairs and manifest.json. Volume i uses a seed
/// derived from (seed, i).
inline DatasetSpec synth_corpus(const SynthConfig& cfg, const std::filesystem::path& out) {
  cfg.validate();
  std::filesystem::create_directories(out);
  DatasetSpec manifest;
  manifest.patch_shape = cfg.patch_shape;
  for (int i = 0; i < cfg.count; ++i) {
    SynthSpec s = cfg.spec;
    Rng rng = make_stream({cfg.spec.seed, static_cast<std::uint64_t>(i), 0x434f5250ull});
    s.seed = rng();
    const SynthSample sample = synth_volume(s);
    save_volume(out / indexed_name("volume", i), sample.volume);
    save_volume(out / indexed_name("labels", i), sample.labels);
    manifest.sources.push_back(indexed_name("volume", i));
    manifest.labels.push_back(indexed_name("labels", i));
  }
  save_manifest(out / "manifest.json", manifest);
  return manifest;
}

inline void cmd_synth(const SynthConfig& cfg, const std::filesystem::path& out) {
  cfg.validate();
  OutputLock lock(out);
  write_resolved_config(out, "synth", cfg.to_json());
  const DatasetSpec m = synth_corpus(cfg, out);
  append_result(out, "synth", cfg.to_json(), {{"volumes", m.sources.size()}, {"manifest", "manifest.json"}});
}

// ---------------------------------------------------------------------------
// pretrain

inline Dataset load_dataset(const std::string& manifest, const char* what) {
  require(!manifest.empty(), ErrorKind::config, std::string(what) + " manifest is not set");
  return Dataset::load(load_manifest(manifest));
}

inline nlohmann::json loss_summary(const LossBreakdown& l) { return l.to_json(); }

inline PretrainOutputs cmd_pretrain(const PretrainConfig& cfg, const std::filesystem::path& out,
                                    const std::optional<std::filesystem::path>& resume = std::nullopt,
                                    const Progress& progress = {}) {
  cfg.validate();
  OutputLock lock(out);
  write_resolved_config(out, "pretrain", cfg.to_json());
  Pretrainer trainer(cfg, load_dataset(cfg.manifest, "pretrain"));
  if (resume) trainer.restore(load_checkpoint(*resume));
  const std::uint64_t every = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(cfg.iterations) / 20);
  PretrainOutputs po = run_pretrain(trainer, out, [&](std::uint64_t k, const LossBreakdown& l) {
    if (progress && (k % every == 0 || k == static_cast<std::uint64_t>(cfg.iterations)))
      progress("step " + std::to_string(k) + " " + loss_csv_row(k, l));
  });
  nlohmann::json summary = {{"steps", trainer.step()}, {"checkpoint", po.final_checkpoint.filename().string()}};
  if (!po.losses.empty()) summary["final"] = loss_summary(po.losses.back());
  append_result(out, "pretrain", cfg.to_json(), summary);
  return po;
}

// ---------------------------------------------------------------------------
// finetune

inline std::filesystem::path cmd_finetune(const FinetuneConfig& cfg, const std::filesystem::path& out,
                                          const Progress& progress = {}) {
  cfg.validate();
  OutputLock lock(out);
  write_resolved_config(out, "finetune", cfg.to_json());
  std::optional<Checkpoint> pre;
  if (!cfg.pretrained.empty()) pre = load_checkpoint(cfg.pretrained);
  Finetuner ft(cfg, load_dataset(cfg.manifest, "finetune"), pre);
  const auto log_path = out / "losses.csv";
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) fail(ErrorKind::io, "cannot open '" + log_path.string() + "' for writing");
  log << "step,l_bce\n";
  double last = 0.0;
  const std::uint64_t every = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(cfg.iterations) / 20);
  while (ft.step() < static_cast<std::uint64_t>(cfg.iterations)) {
    last = ft.step_once();
    log << ft.step() << "," << format_loss(last) << "\n";
    if (progress && ft.step() % every == 0) progress("step " + std::to_string(ft.step()) + " bce " + format_loss(last));
  }
  log.flush();
  if (!log) fail(ErrorKind::io, "failed writing '" + log_path.string() + "'");
  const auto ckpt = out / "segmentation.ckpt";
  save_checkpoint(ckpt, ft.checkpoint());
  nlohmann::json summary = {{"steps", ft.step()}, {"transferred_tensors", ft.transferred()},
                            {"checkpoint", ckpt.filename().string()}};
  if (ft.step() > 0) summary["final_bce"] = last;
  append_result(out, "finetune", cfg.to_json(), summary);
  return ckpt;
}

// ---------------------------------------------------------------------------
// segment

inline SegmentationResult cmd_segment(const std::filesystem::path& checkpoint, const std::filesystem::path& volume,
                                      const SegmentParams& params, const std::filesystem::path& out) {
  params.validate();
  OutputLock lock(out);
  const nlohmann::json cfg = {{"checkpoint", checkpoint.string()}, {"volume", volume.string()},
                              {"segment", params.to_json()}};
  write_resolved_config(out, "segment", cfg);
  const AffinityPredictor model(load_checkpoint(checkpoint));
  Volume v = load_volume(volume);
  normalize(v);
  SegmentationResult r = segment_volume(model, v, params);
  save_volume(out / "segmentation.emv", r.labels);
  write_text_file(out / "segmentation.json", r.to_json().dump(2) + "\n");
  append_result(out, "segment", cfg, r.to_json());
  return r;
}

// ---------------------------------------------------------------------------
// eval

inline MetricsReport cmd_eval(const std::filesystem::path& gt, const std::filesystem::path& pred,
                              const std::optional<std::filesystem::path>& out = std::nullopt) {
  const MetricsReport m = evaluate_segmentation(load_labels(gt), load_labels(pred));
  if (out) {
    OutputLock lock(*out);
    const nlohmann::json cfg = {{"gt", gt.string()}, {"pred", pred.string()}};
    write_resolved_config(*out, "eval", cfg);
    write_text_file(*out / "metrics.json", m.to_json().dump(2) + "\n");
    write_text_file(*out / "metrics.txt", m.table());
    append_result(*out, "eval", cfg, m.to_json());
  }
  return m;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationOutputs {
  std::vector<AblationRow> rows;
  std::string table;
};

inline AblationOutputs cmd_ablate(const AblationConfig& cfg, const std::filesystem::path& out,
                                  const Progress& progress = {}) {
  cfg.validate();
  OutputLock lock(out);
  write_resolved_config(out, "ablate", cfg.to_json());
  const Dataset pre = load_dataset(cfg.pretrain.manifest, "pretrain");
  const Dataset fin = load_dataset(cfg.finetune.manifest, "finetune");
  require(!cfg.eval_manifest.empty(), ErrorKind::config, "eval_manifest is not set");
  const auto eval = load_labeled(load_manifest(cfg.eval_manifest));
  AblationOutputs o;
  o.rows = run_ablation(cfg, pre, fin, eval, out, progress);
  o.table = ablation_table(o.rows);
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : o.rows) rows.push_back(r.to_json());
  write_text_file(out / "ablation.txt", o.table);
  write_text_file(out / "ablation.json", rows.dump(2) + "\n");
  append_result(out, "ablate", cfg.to_json(), {{"rows", rows}});
  return o;
}

// ---------------------------------------------------------------------------
// Config resolution for file-driven subcommands: relative paths become absolute and the
// dedicated --seed flag wins over both file and --set.

inline PretrainConfig resolve_pretrain(const ConfigDocument& d, std::optional<std::uint64_t> seed) {
  PretrainConfig c = parse_config<PretrainConfig>(d.json, "pretrain config");
  c.manifest = d.resolve(c.manifest);
  if (seed) c.seed = *seed;
  return c;
}

inline FinetuneConfig resolve_finetune(const ConfigDocument& d, std::optional<std::uint64_t> seed) {
  FinetuneConfig c = parse_config<FinetuneConfig>(d.json, "finetune config");
  c.manifest = d.resolve(c.manifest);
  c.pretrained = d.resolve(c.pretrained);
  if (seed) c.seed = *seed;
  return c;
}

inline AblationConfig resolve_ablation(const ConfigDocument& d, std::optional<std::uint64_t> seed) {
  AblationConfig c = parse_config<AblationConfig>(d.json, "ablation config");
  c.pretrain.manifest = d.resolve(c.pretrain.manifest);
  c.finetune.manifest = d.resolve(c.finetune.manifest);
  c.eval_manifest = d.resolve(c.eval_manifest);
  require(c.finetune.pretrained.empty(), ErrorKind::config,
          "finetune.pretrained must be empty in an ablation; checkpoints come from the pretraining runs");
  if (seed) c.pretrain.seed = c.finetune.seed = *seed;
  return c;
}

inline SynthConfig resolve_synth(const ConfigDocument& d, std::optional<std::uint64_t> seed) {
  SynthConfig c = parse_config<SynthConfig>(d.json, "synth config");
  if (seed) c.spec.seed = *seed;
  return c;
}

}  // namespace emc::cli
