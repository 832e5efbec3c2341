#pragma once

// Shared container for volume and checkpoint files:
//   64-byte header | UTF-8 JSON metadata | raw little-endian payload
// Header layout: magic[8], u32 version, u32 reserved (0), u64 metadata length,
// zero padding to 64 bytes.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "emconsist/core/error.hpp"

namespace emc {

inline constexpr std::size_t kHeaderBytes = 64;
inline constexpr std::uint32_t kFormatVersion = 1;

struct FramedFile {
  nlohmann::json meta;
  std::vector<unsigned char> payload;
};

namespace detail {

template <class U>
void put_le(unsigned char* dst, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) dst[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFFu);
}

template <class U>
U get_le(const unsigned char* src) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(src[i]) << (8 * i);
  return value;
}

}  // namespace detail

/// Copy trivially-copyable words into a little-endian byte buffer.
template <class T>
std::vector<unsigned char> to_le_bytes(const T* data, std::size_t count) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::vector<unsigned char> out(count * sizeof(T));
  if (count == 0) return out;
  std::memcpy(out.data(), data, out.size());
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    for (std::size_t i = 0; i < count; ++i) std::reverse(out.begin() + i * sizeof(T), out.begin() + (i + 1) * sizeof(T));
  }
  return out;
}

template <class T>
void from_le_bytes(const unsigned char* bytes, std::size_t count, T* dst) {
  static_assert(std::is_trivially_copyable_v<T>);
  if (count == 0) return;
  std::memcpy(dst, bytes, count * sizeof(T));
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto* raw = reinterpret_cast<unsigned char*>(dst);
    for (std::size_t i = 0; i < count; ++i) std::reverse(raw + i * sizeof(T), raw + (i + 1) * sizeof(T));
  }
}

inline std::vector<unsigned char> encode_framed(std::string_view magic, const nlohmann::json& meta,
                                                const std::vector<unsigned char>& payload) {
  const std::string text = meta.dump();
  std::vector<unsigned char> out(kHeaderBytes, 0);
  std::memcpy(out.data(), magic.data(), std::min<std::size_t>(magic.size(), 8));
  detail::put_le<std::uint32_t>(out.data() + 8, kFormatVersion);
  detail::put_le<std::uint64_t>(out.data() + 16, static_cast<std::uint64_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

inline FramedFile decode_framed(std::string_view magic, const std::vector<unsigned char>& bytes,
                                const std::string& origin) {
  if (bytes.size() < kHeaderBytes) {
    fail(ErrorKind::format, origin + ": file has " + std::to_string(bytes.size()) + " bytes, shorter than the " +
                                std::to_string(kHeaderBytes) + "-byte header");
  }
  if (std::memcmp(bytes.data(), magic.data(), std::min<std::size_t>(magic.size(), 8)) != 0) {
    fail(ErrorKind::format, origin + ": bad magic, expected '" + std::string(magic) + "'");
  }
  const auto version = detail::get_le<std::uint32_t>(bytes.data() + 8);
  if (version != kFormatVersion) {
    fail(ErrorKind::format, origin + ": unsupported format version " + std::to_string(version));
  }
  const auto meta_len = detail::get_le<std::uint64_t>(bytes.data() + 16);
  if (meta_len > bytes.size() - kHeaderBytes) {
    fail(ErrorKind::format, origin + ": metadata length " + std::to_string(meta_len) + " exceeds file size");
  }
  FramedFile f;
  const char* text = reinterpret_cast<const char*>(bytes.data() + kHeaderBytes);
  try {
    f.meta = nlohmann::json::parse(text, text + meta_len);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, origin + ": metadata is not valid JSON (" + e.what() + ")");
  }
  f.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderBytes + meta_len), bytes.end());
  return f;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open '" + path.string() + "' for reading");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "short write to '" + path.string() + "'");
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) fail(ErrorKind::io, "short write to '" + path.string() + "'");
}

}  // namespace emc
