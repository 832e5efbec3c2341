#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emconsist/core/error.hpp"
#include "emconsist/core/framed_file.hpp"
#include "emconsist/core/rng.hpp"
#include "emconsist/core/volume_io.hpp"

namespace emc {

/// Manifest of source volumes sampled with equal probability.
struct DatasetSpec {
  std::vector<std::filesystem::path> sources;
  std::vector<std::filesystem::path> labels;  // empty, or parallel to sources
  Shape3 patch_shape = Shape3::cube(32);

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["sources"] = nlohmann::json::array();
    for (const auto& p : sources) j["sources"].push_back(p.generic_string());
    if (!labels.empty()) {
      j["labels"] = nlohmann::json::array();
      for (const auto& p : labels) j["labels"].push_back(p.generic_string());
    }
    j["patch_shape"] = {patch_shape.d, patch_shape.h, patch_shape.w};
    return j;
  }

  /// Relative paths are resolved against base_dir.
  static DatasetSpec from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    DatasetSpec spec;
    try {
      for (const auto& p : j.at("sources")) spec.sources.push_back(resolve(p.get<std::string>(), base_dir));
      if (j.contains("labels"))
        for (const auto& p : j.at("labels")) spec.labels.push_back(resolve(p.get<std::string>(), base_dir));
      if (j.contains("patch_shape")) {
        const auto& ps = j.at("patch_shape");
        spec.patch_shape = {ps.at(0).get<int>(), ps.at(1).get<int>(), ps.at(2).get<int>()};
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::config, std::string("malformed dataset manifest: ") + e.what());
    }
    return spec;
  }

 private:
  static std::filesystem::path resolve(const std::string& p, const std::filesystem::path& base) {
    std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
  }
};

inline DatasetSpec load_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, path.string() + ": " + e.what());
  }
  return DatasetSpec::from_json(j, path.parent_path());
}

inline void save_manifest(const std::filesystem::path& path, const DatasetSpec& spec) {
  write_text_file(path, spec.to_json().dump(2) + "\n");
}

struct PatchSample {
  Volume patch;
  std::size_t source = 0;
  Index3 origin{0, 0, 0};
};

struct LabeledPatch {
  Volume patch;
  LabelVolume labels;
  std::size_t source = 0;
  Index3 origin{0, 0, 0};
};

/// Normalized in-memory sources with a uniform-source, uniform-origin crop sampler.
class Dataset {
 public:
  Dataset(std::vector<Volume> volumes, Shape3 patch_shape, std::vector<LabelVolume> labels = {})
      : volumes_(std::move(volumes)), labels_(std::move(labels)), patch_(patch_shape) {
    require(!volumes_.empty(), ErrorKind::config, "dataset has no sources");
    require(patch_.d >= 1 && patch_.h >= 1 && patch_.w >= 1, ErrorKind::config,
            "patch_shape " + patch_.str() + " must be positive");
    require(labels_.empty() || labels_.size() == volumes_.size(), ErrorKind::config,
            "label list must be empty or match the number of sources");
    for (std::size_t i = 0; i < volumes_.size(); ++i) {
      require(volumes_[i].shape.contains(patch_), ErrorKind::config,
              "patch_shape " + patch_.str() + " exceeds source " + std::to_string(i) + " of shape " +
                  volumes_[i].shape.str());
      if (!labels_.empty())
        require(labels_[i].shape == volumes_[i].shape, ErrorKind::config,
                "labels for source " + std::to_string(i) + " have shape " + labels_[i].shape.str() +
                    ", volume has " + volumes_[i].shape.str());
    }
  }

  /// Loads and min-max normalizes every source; shape checks happen here, not at sample time.
  static Dataset load(const DatasetSpec& spec) {
    std::vector<Volume> vols;
    for (const auto& p : spec.sources) {
      vols.push_back(load_volume(p));
      normalize(vols.back());
    }
    std::vector<LabelVolume> labs;
    for (const auto& p : spec.labels) labs.push_back(load_labels(p));
    return Dataset(std::move(vols), spec.patch_shape, std::move(labs));
  }

  std::size_t size() const noexcept { return volumes_.size(); }
  bool has_labels() const noexcept { return !labels_.empty(); }
  Shape3 patch_shape() const noexcept { return patch_; }
  const Volume& volume(std::size_t i) const { return volumes_.at(i); }
  const LabelVolume& labels(std::size_t i) const { return labels_.at(i); }
  double source_probability() const noexcept { return 1.0 / static_cast<double>(volumes_.size()); }

  PatchSample sample_patch(Rng& rng) const {
    PatchSample s;
    s.source = pick_source(rng);
    s.origin = pick_origin(volumes_[s.source].shape, rng);
    s.patch = crop(volumes_[s.source], s.origin, patch_);
    return s;
  }

  LabeledPatch sample_labeled(Rng& rng) const {
    require(has_labels(), ErrorKind::config, "dataset has no labels");
    LabeledPatch s;
    s.source = pick_source(rng);
    s.origin = pick_origin(volumes_[s.source].shape, rng);
    s.patch = crop(volumes_[s.source], s.origin, patch_);
    s.labels = crop(labels_[s.source], s.origin, patch_);
    return s;
  }

 private:
  std::size_t pick_source(Rng& rng) const {
    return static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(volumes_.size()) - 1));
  }
  Index3 pick_origin(const Shape3& src, Rng& rng) const {
    return {uniform_int(rng, 0, src.d - patch_.d), uniform_int(rng, 0, src.h - patch_.h),
            uniform_int(rng, 0, src.w - patch_.w)};
  }

  std::vector<Volume> volumes_;
  std::vector<LabelVolume> labels_;
  Shape3 patch_;
};

}  // namespace emc
