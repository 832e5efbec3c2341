#pragma once

// Checkpoint file: framed header + JSON (kind, free-form config, parameter manifest, optimizer
// step) + float32 payload of the parameters followed by the Adam moments when present.

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "emconsist/core/framed_file.hpp"
#include "emconsist/nn/params.hpp"
#include "emconsist/train/adam.hpp"

namespace emc {

inline constexpr std::string_view kCheckpointMagic = "EMCCHKPT";

struct Checkpoint {
  std::string kind;  // "pretrain" or "segmentation"
  nlohmann::json config = nlohmann::json::object();
  ParameterSet<float> params;
  std::optional<AdamState<float>> adam;
  std::uint64_t step = 0;

  bool operator==(const Checkpoint&) const = default;
};

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& c) {
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& e : c.params.layout.entries())
    manifest.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}});
  nlohmann::json meta = {{"kind", c.kind},
                         {"config", c.config},
                         {"params", manifest},
                         {"count", c.params.values.size()},
                         {"step", c.step},
                         {"adam", c.adam ? nlohmann::json{{"step", c.adam->step}} : nlohmann::json(nullptr)}};
  std::vector<unsigned char> payload = to_le_bytes(c.params.values.data(), c.params.values.size());
  if (c.adam) {
    auto m = to_le_bytes(c.adam->m.data(), c.adam->m.size());
    auto v = to_le_bytes(c.adam->v.data(), c.adam->v.size());
    payload.insert(payload.end(), m.begin(), m.end());
    payload.insert(payload.end(), v.begin(), v.end());
  }
  return encode_framed(kCheckpointMagic, meta, payload);
}

inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& origin = "checkpoint") {
  FramedFile f = decode_framed(kCheckpointMagic, bytes, origin);
  Checkpoint c;
  try {
    c.kind = f.meta.at("kind").get<std::string>();
    c.config = f.meta.at("config");
    c.step = f.meta.at("step").get<std::uint64_t>();
    for (const auto& e : f.meta.at("params")) {
      c.params.layout.add(e.at("name").get<std::string>(), e.at("shape").get<std::vector<int>>(), Init::zeros);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, origin + ": malformed checkpoint metadata (" + e.what() + ")");
  }
  const std::size_t n = c.params.layout.total();
  const bool has_adam = !f.meta.at("adam").is_null();
  const std::size_t expected = n * sizeof(float) * (has_adam ? 3 : 1);
  require(f.payload.size() == expected, ErrorKind::format,
          origin + ": payload size mismatch: expected " + std::to_string(expected) + " bytes, found " +
              std::to_string(f.payload.size()));
  c.params.values.resize(n);
  from_le_bytes(f.payload.data(), n, c.params.values.data());
  if (has_adam) {
    AdamState<float> st(n);
    st.step = f.meta.at("adam").at("step").get<std::uint64_t>();
    from_le_bytes(f.payload.data() + n * sizeof(float), n, st.m.data());
    from_le_bytes(f.payload.data() + 2 * n * sizeof(float), n, st.v.data());
    c.adam = std::move(st);
  }
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_file_bytes(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path), path.string());
}

/// Copies every `dst` entry under `prefix` from the same-named `src` entry. Missing entries and
/// shape differences are all reported in one error.
inline std::size_t transfer_parameters(const ParameterSet<float>& src, ParameterSet<float>& dst,
                                       const std::string& prefix) {
  std::string diff;
  std::size_t copied = 0;
  for (const auto& e : dst.layout.entries()) {
    if (e.name.rfind(prefix, 0) != 0) continue;
    if (!src.layout.contains(e.name)) {
      diff += "\n  missing " + e.name;
      continue;
    }
    const auto& s = src.layout.at(e.name);
    if (s.shape != e.shape) {
      auto str = [](const std::vector<int>& v) {
        std::string o = "[";
        for (std::size_t i = 0; i < v.size(); ++i) o += (i ? "," : "") + std::to_string(v[i]);
        return o + "]";
      };
      diff += "\n  " + e.name + ": checkpoint " + str(s.shape) + " vs model " + str(e.shape);
      continue;
    }
    std::copy_n(src.values.begin() + static_cast<std::ptrdiff_t>(s.offset), e.size,
                dst.values.begin() + static_cast<std::ptrdiff_t>(e.offset));
    ++copied;
  }
  require(diff.empty(), ErrorKind::config, "checkpoint is incompatible with the model:" + diff);
  return copied;
}

}  // namespace emc
