/**
 * @file slice_export.hpp
 * @brief Binary PGM/PPM snapshots of single slices for visual inspection.
 */
#pragma once

#include "asmnet/error.hpp"
#include "asmnet/volume.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace asmnet {

enum class Axis { x = 0, y = 1, z = 2 };

namespace detail {

struct SliceGeometry {
  int width = 0, height = 0;
};

/// In-plane axes: z-slices are (x, y), y-slices are (x, z), x-slices are (y, z).
inline SliceGeometry slice_geometry(Dims d, Axis axis) {
  switch (axis) {
  case Axis::x: return {d.y, d.z};
  case Axis::y: return {d.x, d.z};
  default: return {d.x, d.y};
  }
}

template <typename T> std::vector<T> extract_slice(const Grid3<T> &g, Axis axis, int index) {
  const int along = g.dims[static_cast<int>(axis)];
  require(index >= 0 && index < along, Errc::parameter,
          "slice index " + std::to_string(index) + " out of range [0," + std::to_string(along) + ")");
  const auto geo = slice_geometry(g.dims, axis);
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(geo.width) * static_cast<std::size_t>(geo.height));
  for (int r = 0; r < geo.height; ++r)
    for (int c = 0; c < geo.width; ++c) {
      switch (axis) {
      case Axis::x: out.push_back(g.at(index, c, r)); break;
      case Axis::y: out.push_back(g.at(c, index, r)); break;
      default: out.push_back(g.at(c, r, index)); break;
      }
    }
  return out;
}

inline void write_pnm(const std::filesystem::path &path, const char *magic, SliceGeometry geo,
                      const std::vector<std::uint8_t> &pixels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), Errc::io, "cannot open " + path.string());
  out << magic << "\n" << geo.width << " " << geo.height << "\n255\n";
  out.write(reinterpret_cast<const char *>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  require(static_cast<bool>(out), Errc::io, "write failed for " + path.string());
}

} // namespace detail

/// Deterministic label colour: black for 0, else full-saturation hue at frac(c * 0.618...).
inline std::array<std::uint8_t, 3> label_color(int label) {
  if (label == 0)
    return {0, 0, 0};
  constexpr double golden = 0.61803398874989484820;
  const double h = std::fmod(label * golden, 1.0) * 6.0;
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const auto to8 = [](double v) { return static_cast<std::uint8_t>(std::lround(v * 255.0)); };
  const std::uint8_t full = 255, zero = 0, rise = to8(f), fall = to8(1.0 - f);
  switch (sector) {
  case 0: return {full, rise, zero};
  case 1: return {fall, full, zero};
  case 2: return {zero, full, rise};
  case 3: return {zero, fall, full};
  case 4: return {rise, zero, full};
  default: return {full, zero, fall};
  }
}

/// Grayscale P5 image, min-max scaled over the slice; a constant slice maps to 128.
inline void export_slice(const Volume &v, Axis axis, int index, const std::filesystem::path &path) {
  const auto values = detail::extract_slice(v, axis, index);
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double mn = *lo, mx = *hi;
  std::vector<std::uint8_t> pixels(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    pixels[i] = mx > mn ? static_cast<std::uint8_t>(std::lround(255.0 * (values[i] - mn) / (mx - mn))) : 128;
  detail::write_pnm(path, "P5", detail::slice_geometry(v.dims, axis), pixels);
}

/// Colour P6 image using label_color().
inline void export_slice(const LabelMap &l, Axis axis, int index, const std::filesystem::path &path) {
  const auto labels = detail::extract_slice(l, axis, index);
  std::vector<std::uint8_t> pixels;
  pixels.reserve(labels.size() * 3);
  for (auto lab : labels) {
    const auto rgb = label_color(lab);
    pixels.insert(pixels.end(), rgb.begin(), rgb.end());
  }
  detail::write_pnm(path, "P6", detail::slice_geometry(l.dims, axis), pixels);
}

} // namespace asmnet
