#pragma once

#include <filesystem>
#include <string>
#include <variant>

#include "emconsist/core/framed_file.hpp"
#include "emconsist/core/volume.hpp"

namespace emc {

inline constexpr std::string_view kVolumeMagic = "EMCVOLUM";

using AnyVolume = std::variant<Volume, LabelVolume>;

namespace detail {

template <class V>
nlohmann::json volume_meta(const V& v, const char* dtype) {
  return {{"dtype", dtype},
          {"shape", {v.shape.d, v.shape.h, v.shape.w}},
          {"voxel_size", {v.voxel_size[0], v.voxel_size[1], v.voxel_size[2]}}};
}

}  // namespace detail

inline std::vector<unsigned char> encode_volume(const Volume& v) {
  return encode_framed(kVolumeMagic, detail::volume_meta(v, "f32"), to_le_bytes(v.voxels.data(), v.voxels.size()));
}

inline std::vector<unsigned char> encode_volume(const LabelVolume& v) {
  return encode_framed(kVolumeMagic, detail::volume_meta(v, "u32"), to_le_bytes(v.voxels.data(), v.voxels.size()));
}

inline AnyVolume decode_volume(const std::vector<unsigned char>& bytes, const std::string& origin = "<memory>") {
  FramedFile f = decode_framed(kVolumeMagic, bytes, origin);
  Shape3 shape;
  VoxelSize voxel_size{1.0, 1.0, 1.0};
  std::string dtype;
  try {
    const auto& s = f.meta.at("shape");
    if (!s.is_array() || s.size() != 3) fail(ErrorKind::format, origin + ": 'shape' must have 3 entries");
    shape = {s[0].get<int>(), s[1].get<int>(), s[2].get<int>()};
    dtype = f.meta.at("dtype").get<std::string>();
    if (f.meta.contains("voxel_size")) {
      const auto& vs = f.meta["voxel_size"];
      voxel_size = {vs.at(0).get<double>(), vs.at(1).get<double>(), vs.at(2).get<double>()};
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, origin + ": malformed metadata (" + e.what() + ")");
  }
  if (shape.d <= 0 || shape.h <= 0 || shape.w <= 0) fail(ErrorKind::format, origin + ": non-positive shape " + shape.str());
  if (dtype != "f32" && dtype != "u32") fail(ErrorKind::format, origin + ": unknown dtype '" + dtype + "'");

  const std::size_t expected = shape.size() * 4;
  if (f.payload.size() != expected) {
    fail(ErrorKind::format, origin + ": payload size mismatch for shape " + shape.str() + " dtype " + dtype +
                                ": expected " + std::to_string(expected) + " bytes, found " +
                                std::to_string(f.payload.size()));
  }
  if (dtype == "f32") {
    Volume v(shape);
    v.voxel_size = voxel_size;
    from_le_bytes(f.payload.data(), shape.size(), v.voxels.data());
    return v;
  }
  LabelVolume v(shape);
  v.voxel_size = voxel_size;
  from_le_bytes(f.payload.data(), shape.size(), v.voxels.data());
  return v;
}

inline AnyVolume load_any_volume(const std::filesystem::path& path) {
  return decode_volume(read_file_bytes(path), path.string());
}

/// Loads an f32 intensity volume; u32 files are rejected.
inline Volume load_volume(const std::filesystem::path& path) {
  AnyVolume any = load_any_volume(path);
  if (auto* v = std::get_if<Volume>(&any)) return std::move(*v);
  fail(ErrorKind::format, path.string() + ": expected dtype f32, found u32");
}

inline LabelVolume load_labels(const std::filesystem::path& path) {
  AnyVolume any = load_any_volume(path);
  if (auto* v = std::get_if<LabelVolume>(&any)) return std::move(*v);
  fail(ErrorKind::format, path.string() + ": expected dtype u32, found f32");
}

inline void save_volume(const std::filesystem::path& path, const Volume& v) { write_file_bytes(path, encode_volume(v)); }
inline void save_volume(const std::filesystem::path& path, const LabelVolume& v) {
  write_file_bytes(path, encode_volume(v));
}
inline void save_volume(const std::filesystem::path& path, const AnyVolume& v) {
  std::visit([&](const auto& x) { save_volume(path, x); }, v);
}

}  // namespace emc
