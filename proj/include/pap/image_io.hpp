#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "pap/errors.hpp"
#include "pap/tensor.hpp"

namespace pap {

inline void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
                      std::span<const std::uint8_t> gray) {
  if (gray.size() != height * width) throw DimensionError("write_pgm: pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
}

inline void write_ppm(const std::filesystem::path& path, std::size_t height, std::size_t width,
                      std::span<const std::uint8_t> rgb) {
  if (rgb.size() != 3 * height * width) throw DimensionError("write_ppm: pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "P6\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

inline std::uint8_t to_byte(double v01) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v01, 0.0, 1.0) * 255.0));
}

/// Min-max normalized 8-bit rendering of an H x W (or 1 x H x W) map.
inline std::vector<std::uint8_t> heat_map(const Tensor& map) {
  const auto data = map.data();
  const auto [lo, hi] = std::minmax_element(data.begin(), data.end());
  const double range = *hi - *lo;
  std::vector<std::uint8_t> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out[i] = to_byte(range > 0 ? (data[i] - *lo) / range : 0.0);
  return out;
}

/// Normals mapped to RGB as (n + 1) / 2; input is 3 x H x W.
inline std::vector<std::uint8_t> normal_rgb(const Tensor& normals) {
  const std::size_t n = normals.dim(1) * normals.dim(2);
  std::vector<std::uint8_t> out(3 * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) out[3 * i + c] = to_byte((normals[c * n + i] + 1.0) / 2.0);
  return out;
}

inline std::array<std::uint8_t, 3> palette_color(std::size_t label) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette{{{230, 25, 75},
                                                                        {60, 180, 75},
                                                                        {255, 225, 25},
                                                                        {0, 130, 200},
                                                                        {245, 130, 48},
                                                                        {145, 30, 180},
                                                                        {70, 240, 240},
                                                                        {240, 50, 230}}};
  return kPalette[label % kPalette.size()];
}

inline std::vector<std::uint8_t> label_rgb(std::span<const int> labels) {
  std::vector<std::uint8_t> out(3 * labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = palette_color(static_cast<std::size_t>(std::max(labels[i], 0)));
    std::copy(c.begin(), c.end(), out.begin() + static_cast<long>(3 * i));
  }
  return out;
}

}  // namespace pap
