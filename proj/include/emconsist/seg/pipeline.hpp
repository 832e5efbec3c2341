#pragma once

#include <nlohmann/json.hpp>

#include "emconsist/core/config_reader.hpp"
#include "emconsist/seg/agglomerate.hpp"
#include "emconsist/seg/finetune.hpp"
#include "emconsist/seg/watershed.hpp"

namespace emc {

struct SegmentParams {
  double seed_threshold = 0.9;
  double boundary_threshold = 0.05;
  double merge_threshold = 0.5;
  int stride = 16;  // sliding-window step, voxels

  WatershedParams watershed() const { return {seed_threshold, boundary_threshold}; }

  void validate() const {
    watershed().validate();
    require(merge_threshold >= 0.0 && merge_threshold <= 1.0, ErrorKind::validation,
            "merge threshold must lie in [0, 1]");
    require(stride >= 1, ErrorKind::validation, "stride must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"seed_threshold", seed_threshold},
            {"boundary_threshold", boundary_threshold},
            {"merge_threshold", merge_threshold},
            {"stride", stride}};
  }
  void read(ConfigReader& r) {
    r.get("seed_threshold", seed_threshold);
    r.get("boundary_threshold", boundary_threshold);
    r.get("merge_threshold", merge_threshold);
    r.get("stride", stride);
    r.check(seed_threshold > 0.0 && seed_threshold < 1.0, "seed_threshold", "must lie in (0, 1)");
    r.check(boundary_threshold > 0.0 && boundary_threshold < 1.0, "boundary_threshold", "must lie in (0, 1)");
    r.check(merge_threshold >= 0.0 && merge_threshold <= 1.0, "merge_threshold", "must lie in [0, 1]");
    r.check(stride >= 1, "stride", "must be >= 1");
    r.finish();
  }
};

/// Watershed fragments followed by agglomeration.
inline SegmentationResult segment_affinities(const AffinityMap& aff, const SegmentParams& p) {
  p.validate();
  return agglomerate(build_fragment_graph(watershed_fragments(aff, p.watershed()), aff), p.merge_threshold);
}

inline SegmentationResult segment_volume(const AffinityPredictor& model, const Volume& volume, const SegmentParams& p) {
  p.validate();
  return segment_affinities(model.predict(volume, p.stride), p);
}

}  // namespace emc
