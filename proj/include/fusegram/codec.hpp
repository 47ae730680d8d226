#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusegram/data.hpp"
#include "fusegram/error.hpp"

namespace fusegram {

inline constexpr std::size_t kImageSide = 4;
inline constexpr std::size_t kImagePixels = kImageSide * kImageSide;
inline constexpr std::size_t kPadCount = kImagePixels - kFusedChannels;

/// 4x4 8-bit image plus the scale needed to invert the quantization.
struct EncodedImage {
  std::array<std::uint8_t, kImagePixels> pixels{};
  double scale_min = 0.0;
  double scale_max = 0.0;
  std::uint16_t pad_count = kPadCount;

  /// Builds an image from untrusted integer intensities.
  static EncodedImage from_pixels(std::span<const int> values, double scale_min, double scale_max) {
    if (values.size() != kImagePixels) throw DataError("encoded image needs 16 pixels");
    if (!(scale_min <= scale_max)) throw DataError("encoded image has scale_min > scale_max");
    EncodedImage img;
    for (std::size_t k = 0; k < kImagePixels; ++k) {
      if (values[k] < 0 || values[k] > 255)
        throw DataError("pixel " + std::to_string(k) + " outside [0,255]: " + std::to_string(values[k]));
      img.pixels[k] = static_cast<std::uint8_t>(values[k]);
    }
    img.scale_min = scale_min;
    img.scale_max = scale_max;
    return img;
  }

  /// Width of one quantization level in signal units.
  [[nodiscard]] double step() const { return (scale_max - scale_min) / 255.0; }

  bool operator==(const EncodedImage&) const = default;
};

/**
 * Zero-pads the 14 channels to 16, scales the padded vector (pads included)
 * to 0-255 and rounds half away from zero. A constant padded vector can only
 * be all zeros; it maps to an all-zero image with min == max.
 */
inline EncodedImage encode(const FusedSample& sample) {
  std::array<double, kImagePixels> padded{};
  for (std::size_t k = 0; k < kFusedChannels; ++k) {
    if (!std::isfinite(sample.channels[k]))
      throw NumericError("encode: non-finite channel " + std::to_string(k) + " in sample " + std::to_string(sample.id));
    padded[k] = sample.channels[k];
  }
  const auto [lo, hi] = std::minmax_element(padded.begin(), padded.end());
  EncodedImage img;
  img.scale_min = *lo;
  img.scale_max = *hi;
  const double range = img.scale_max - img.scale_min;
  if (range > 0.0) {
    for (std::size_t k = 0; k < kImagePixels; ++k) {
      const double q = std::round(255.0 * (padded[k] - img.scale_min) / range);
      img.pixels[k] = static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
    }
  }
  return img;
}

/// All 16 reconstructed values, pads included.
inline std::array<double, kImagePixels> decode_padded(const EncodedImage& img) {
  std::array<double, kImagePixels> v{};
  const double range = img.scale_max - img.scale_min;
  for (std::size_t k = 0; k < kImagePixels; ++k)
    if (range == 0.0 || img.pixels[k] == 0) v[k] = img.scale_min;
    else if (img.pixels[k] == 255) v[k] = img.scale_max;
    else v[k] = img.scale_min + static_cast<double>(img.pixels[k]) * range / 255.0;
  return v;
}

inline FusedSample decode(const EncodedImage& img) {
  if (img.pad_count != kPadCount) throw DataError("decode: pad_count must be 2");
  if (!(img.scale_min <= img.scale_max)) throw DataError("decode: scale_min > scale_max");
  const auto v = decode_padded(img);
  FusedSample s;
  std::copy_n(v.begin(), kFusedChannels, s.channels.begin());
  return s;
}

// ---------------------------------------------------------------------------
// .sie container: "SIE1", u16 width, u16 height, u16 pad_count, f64 min, f64 max,
// 16 pixel bytes. All integers and floats little-endian.

inline constexpr std::size_t kSieSize = 4 + 3 * 2 + 2 * 8 + kImagePixels;

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
}

inline std::uint16_t get_u16(std::span<const std::uint8_t> in, std::size_t at) {
  return static_cast<std::uint16_t>(in[at] | (in[at + 1] << 8));
}

inline double get_f64(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint64_t bits = 0;
  for (int b = 7; b >= 0; --b) bits = (bits << 8) | in[at + static_cast<std::size_t>(b)];
  return std::bit_cast<double>(bits);
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path);
}

} // namespace detail

inline std::vector<std::uint8_t> to_sie(const EncodedImage& img) {
  std::vector<std::uint8_t> out{'S', 'I', 'E', '1'};
  out.reserve(kSieSize);
  detail::put_u16(out, kImageSide);
  detail::put_u16(out, kImageSide);
  detail::put_u16(out, img.pad_count);
  detail::put_f64(out, img.scale_min);
  detail::put_f64(out, img.scale_max);
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline EncodedImage from_sie(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kSieSize) throw DataError("sie: expected 42 bytes, got " + std::to_string(bytes.size()));
  if (std::memcmp(bytes.data(), "SIE1", 4) != 0) throw DataError("sie: bad magic");
  if (detail::get_u16(bytes, 4) != kImageSide || detail::get_u16(bytes, 6) != kImageSide)
    throw DataError("sie: only 4x4 images are supported");
  EncodedImage img;
  img.pad_count = detail::get_u16(bytes, 8);
  if (img.pad_count != kPadCount) throw DataError("sie: pad_count must be 2");
  img.scale_min = detail::get_f64(bytes, 10);
  img.scale_max = detail::get_f64(bytes, 18);
  if (!(img.scale_min <= img.scale_max)) throw DataError("sie: scale_min > scale_max");
  std::copy_n(bytes.begin() + 26, kImagePixels, img.pixels.begin());
  return img;
}

inline void write_sie(const EncodedImage& img, const std::string& path) { detail::write_file(path, to_sie(img)); }

inline EncodedImage read_sie(const std::string& path) { return from_sie(detail::read_file(path)); }

// ---------------------------------------------------------------------------
// PGM (P5) export. The scale lives in a JSON sidecar next to the image.

inline std::vector<std::uint8_t> to_pgm(const EncodedImage& img) {
  const std::string header = "P5\n4 4\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline nlohmann::json pgm_sidecar(const EncodedImage& img) {
  return {{"scale_min", img.scale_min}, {"scale_max", img.scale_max}, {"pad_count", img.pad_count}};
}

inline void write_pgm(const EncodedImage& img, const std::string& pgm_path, const std::string& sidecar_path) {
  detail::write_file(pgm_path, to_pgm(img));
  std::ofstream side(sidecar_path);
  if (!side) throw DataError("cannot write " + sidecar_path);
  side << pgm_sidecar(img).dump() << '\n';
}

inline EncodedImage from_pgm(std::span<const std::uint8_t> bytes, const nlohmann::json& sidecar) {
  const std::string header = "P5\n4 4\n255\n";
  if (bytes.size() != header.size() + kImagePixels || std::memcmp(bytes.data(), header.data(), header.size()) != 0)
    throw DataError("pgm: expected a 4x4 P5 image with maxval 255");
  EncodedImage img;
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(header.size()), kImagePixels, img.pixels.begin());
  try {
    img.scale_min = sidecar.at("scale_min").get<double>();
    img.scale_max = sidecar.at("scale_max").get<double>();
    img.pad_count = sidecar.at("pad_count").get<std::uint16_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("pgm sidecar: ") + e.what());
  }
  if (img.pad_count != kPadCount) throw DataError("pgm sidecar: pad_count must be 2");
  return img;
}

inline EncodedImage read_pgm(const std::string& pgm_path, const std::string& sidecar_path) {
  std::ifstream side(sidecar_path);
  if (!side) throw DataError("cannot open " + sidecar_path);
  nlohmann::json j;
  try {
    side >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(sidecar_path + ": " + e.what());
  }
  return from_pgm(detail::read_file(pgm_path), j);
}

} // namespace fusegram
