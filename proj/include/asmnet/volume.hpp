/**
 * @file volume.hpp
 * @brief Scalar volumes, label maps and probability volumes, plus the
 * geometric operations the assemblies need (resampling, block
 * down-sampling, nearest-neighbour up-sampling, intensity normalization).
 *
 * All grids are stored x-fastest: index = x + Dx * (y + Dy * z).
 */
#pragma once

#include "asmnet/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace asmnet {

struct Dims {
  int x = 0, y = 0, z = 0;

  constexpr std::size_t count() const {
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
  }
  constexpr int operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  constexpr int &operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
  constexpr bool valid() const { return x > 0 && y > 0 && z > 0; }
  friend constexpr bool operator==(const Dims &, const Dims &) = default;
};

inline std::string to_string(const Dims &d) {
  return "(" + std::to_string(d.x) + "," + std::to_string(d.y) + "," + std::to_string(d.z) + ")";
}

using Spacing = std::array<double, 3>;
/// Row-major 4x4 voxel-to-world (or voxel-to-voxel) transform.
using Affine = std::array<double, 16>;

inline Affine identity_affine() {
  return {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
}

/// Dense 3D grid with geometry metadata.
template <typename T> struct Grid3 {
  Dims dims;
  Spacing spacing{1.0, 1.0, 1.0};
  std::optional<Affine> affine;
  std::vector<T> data;

  Grid3() = default;
  explicit Grid3(Dims d, T fill = T{}) : dims(d), data(d.count(), fill) {
    require(d.valid(), Errc::parameter, "dimensions must be positive, got " + to_string(d));
  }

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims.x) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims.y) * static_cast<std::size_t>(z));
  }
  T &at(int x, int y, int z) { return data[index(x, y, z)]; }
  const T &at(int x, int y, int z) const { return data[index(x, y, z)]; }
  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims.x && y < dims.y && z < dims.z;
  }
  std::size_t size() const { return data.size(); }

  /// Copies geometry (dims excluded) from another grid.
  template <typename U> void copy_geometry(const Grid3<U> &other) {
    spacing = other.spacing;
    affine = other.affine;
  }

  friend bool operator==(const Grid3 &, const Grid3 &) = default;
};

/// 32-bit float intensity (or feature) volume.
struct Volume : Grid3<float> {
  using Grid3<float>::Grid3;
  friend bool operator==(const Volume &, const Volume &) = default;
};

/// Integer label grid; label 0 is background.
struct LabelMap : Grid3<std::uint16_t> {
  int num_classes = 2;

  LabelMap() = default;
  LabelMap(Dims d, int classes, std::uint16_t fill = 0) : Grid3<std::uint16_t>(d, fill), num_classes(classes) {
    require(classes >= 2, Errc::parameter, "a label map needs at least 2 classes");
  }

  /// Throws unless every label is below num_classes.
  void validate() const {
    require(num_classes >= 2, Errc::parameter, "a label map needs at least 2 classes");
    require(data.size() == dims.count(), Errc::parameter, "label data length does not match dims");
    for (auto l : data)
      require(l < num_classes, Errc::parameter,
              "label " + std::to_string(l) + " out of range for C=" + std::to_string(num_classes));
  }

  friend bool operator==(const LabelMap &, const LabelMap &) = default;
};

/// Soft segmentation: a length-C probability vector per voxel, voxel-major.
struct ProbVolume {
  Dims dims;
  int num_classes = 0;
  std::vector<float> data;

  ProbVolume() = default;
  ProbVolume(Dims d, int classes) : dims(d), num_classes(classes), data(d.count() * static_cast<std::size_t>(classes), 0.f) {}

  std::span<float> voxel(std::size_t v) {
    return {data.data() + v * static_cast<std::size_t>(num_classes), static_cast<std::size_t>(num_classes)};
  }
  std::span<const float> voxel(std::size_t v) const {
    return {data.data() + v * static_cast<std::size_t>(num_classes), static_cast<std::size_t>(num_classes)};
  }

  /// Largest deviation of any voxel's probability sum from 1.
  double max_simplex_error() const {
    double worst = 0.0;
    for (std::size_t v = 0; v < dims.count(); ++v) {
      double s = 0.0;
      for (float p : voxel(v)) {
        if (p < 0.f || p > 1.f)
          worst = std::max(worst, p < 0.f ? double(-p) : double(p) - 1.0);
        s += p;
      }
      worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
  }
};

/// Argmax per voxel, ties to the smallest class.
inline LabelMap argmax_labels(const ProbVolume &probs) {
  LabelMap out(probs.dims, probs.num_classes);
  for (std::size_t v = 0; v < probs.dims.count(); ++v) {
    auto p = probs.voxel(v);
    int best = 0;
    for (int c = 1; c < probs.num_classes; ++c)
      if (p[c] > p[best])
        best = c;
    out.data[v] = static_cast<std::uint16_t>(best);
  }
  return out;
}

enum class Interp { nearest, trilinear };

namespace detail {

inline Eigen::Matrix4d to_matrix(const Affine &a) {
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      m(r, c) = a[static_cast<std::size_t>(4 * r + c)];
  return m;
}

inline Eigen::Matrix4d inverse_affine(const Affine &a) {
  const Eigen::Matrix4d m = to_matrix(a);
  Eigen::FullPivLU<Eigen::Matrix4d> lu(m);
  require(lu.isInvertible() && std::abs(m.determinant()) > 1e-12, Errc::parameter, "affine is singular");
  return lu.inverse();
}

template <typename T, typename Sampler>
void resample_into(const Grid3<T> &in, Grid3<T> &out, const Affine &affine, Sampler &&sample) {
  const Eigen::Matrix4d inv = inverse_affine(affine);
  for (int z = 0; z < out.dims.z; ++z)
    for (int y = 0; y < out.dims.y; ++y)
      for (int x = 0; x < out.dims.x; ++x) {
        const Eigen::Vector4d src = inv * Eigen::Vector4d(x, y, z, 1.0);
        out.at(x, y, z) = sample(in, src[0], src[1], src[2]);
      }
}

template <typename T> T sample_nearest(const Grid3<T> &in, double cx, double cy, double cz) {
  const int x = static_cast<int>(std::floor(cx + 0.5));
  const int y = static_cast<int>(std::floor(cy + 0.5));
  const int z = static_cast<int>(std::floor(cz + 0.5));
  return in.contains(x, y, z) ? in.at(x, y, z) : T{};
}

inline float sample_trilinear(const Grid3<float> &in, double cx, double cy, double cz) {
  constexpr double tol = 1e-9;
  const std::array<double, 3> c{cx, cy, cz};
  std::array<int, 3> lo{};
  std::array<double, 3> frac{};
  for (int a = 0; a < 3; ++a) {
    const int n = in.dims[a];
    if (c[a] < -tol || c[a] > (n - 1) + tol)
      return 0.f;
    const double cc = std::clamp(c[a], 0.0, double(n - 1));
    lo[a] = std::min(static_cast<int>(std::floor(cc)), std::max(n - 2, 0));
    frac[a] = n == 1 ? 0.0 : cc - lo[a];
  }
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? frac[0] : 1 - frac[0]) * (dy ? frac[1] : 1 - frac[1]) * (dz ? frac[2] : 1 - frac[2]);
        if (w == 0.0)
          continue;
        acc += w * in.at(std::min(lo[0] + dx, in.dims.x - 1), std::min(lo[1] + dy, in.dims.y - 1),
                         std::min(lo[2] + dz, in.dims.z - 1));
      }
  return static_cast<float>(acc);
}

} // namespace detail

/**
 * Resamples a volume through a voxel-space transform. `affine` maps input
 * voxel coordinates to output voxel coordinates; each output voxel is
 * sampled at the inverse-mapped position. Samples outside the input are 0.
 */
inline Volume resample_affine(const Volume &v, const Affine &affine, Dims out_dims, Spacing out_spacing,
                              Interp interp) {
  Volume out(out_dims);
  out.spacing = out_spacing;
  if (interp == Interp::nearest)
    detail::resample_into<float>(v, out, affine, detail::sample_nearest<float>);
  else
    detail::resample_into<float>(v, out, affine, detail::sample_trilinear);
  return out;
}

inline LabelMap resample_affine(const LabelMap &l, const Affine &affine, Dims out_dims, Spacing out_spacing,
                                Interp interp) {
  require(interp == Interp::nearest, Errc::parameter, "label maps can only be resampled with nearest interpolation");
  LabelMap out(out_dims, l.num_classes);
  out.spacing = out_spacing;
  detail::resample_into<std::uint16_t>(l, out, affine, detail::sample_nearest<std::uint16_t>);
  return out;
}

/// (v - mean) / std over the mask (population std); zero outside the mask.
inline Volume normalize_intensity(const Volume &v, const LabelMap &mask) {
  require(mask.dims == v.dims, Errc::parameter, "mask dims " + to_string(mask.dims) + " != volume dims " + to_string(v.dims));
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (mask.data[i] != 0) {
      sum += v.data[i];
      ++n;
    }
  require(n > 0, Errc::parameter, "mask is empty");
  const double mean = sum / double(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (mask.data[i] != 0) {
      const double d = v.data[i] - mean;
      ss += d * d;
    }
  const double sd = std::sqrt(ss / double(n));
  require(sd >= 1e-8, Errc::degenerate_input, "intensity is constant inside the mask");

  Volume out(v.dims, 0.f);
  out.copy_geometry(v);
  for (std::size_t i = 0; i < v.size(); ++i)
    if (mask.data[i] != 0)
      out.data[i] = static_cast<float>((v.data[i] - mean) / sd);
  return out;
}

using Factor = std::array<int, 3>;

inline Dims downsampled_dims(Dims d, Factor f) {
  return {(d.x + f[0] - 1) / f[0], (d.y + f[1] - 1) / f[1], (d.z + f[2] - 1) / f[2]};
}

namespace detail {

template <typename T, typename Reduce>
void for_each_block(const Grid3<T> &in, Grid3<T> &out, Factor f, Reduce &&reduce) {
  std::vector<T> block;
  block.reserve(static_cast<std::size_t>(f[0]) * f[1] * f[2]);
  for (int z = 0; z < out.dims.z; ++z)
    for (int y = 0; y < out.dims.y; ++y)
      for (int x = 0; x < out.dims.x; ++x) {
        block.clear();
        for (int bz = z * f[2]; bz < std::min((z + 1) * f[2], in.dims.z); ++bz)
          for (int by = y * f[1]; by < std::min((y + 1) * f[1], in.dims.y); ++by)
            for (int bx = x * f[0]; bx < std::min((x + 1) * f[0], in.dims.x); ++bx)
              block.push_back(in.at(bx, by, bz));
        out.at(x, y, z) = reduce(block);
      }
}

inline void scale_geometry(Spacing &spacing, std::optional<Affine> &affine, Factor f) {
  for (int a = 0; a < 3; ++a)
    spacing[static_cast<std::size_t>(a)] *= f[static_cast<std::size_t>(a)];
  if (affine)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        (*affine)[static_cast<std::size_t>(4 * r + c)] *= f[static_cast<std::size_t>(c)];
}

} // namespace detail

/// Block mean; partial edge blocks average over the voxels present.
inline Volume downsample(const Volume &v, Factor f) {
  require(f[0] >= 1 && f[1] >= 1 && f[2] >= 1, Errc::parameter, "downsample factor must be >= 1");
  Volume out(downsampled_dims(v.dims, f));
  out.copy_geometry(v);
  detail::scale_geometry(out.spacing, out.affine, f);
  detail::for_each_block<float>(v, out, f, [](const std::vector<float> &b) {
    double s = 0.0;
    for (float x : b)
      s += x;
    return static_cast<float>(s / double(b.size()));
  });
  return out;
}

/// Block majority label; ties go to the smallest label.
inline LabelMap downsample(const LabelMap &l, Factor f) {
  require(f[0] >= 1 && f[1] >= 1 && f[2] >= 1, Errc::parameter, "downsample factor must be >= 1");
  LabelMap out(downsampled_dims(l.dims, f), l.num_classes);
  out.copy_geometry(l);
  detail::scale_geometry(out.spacing, out.affine, f);
  std::vector<int> counts(static_cast<std::size_t>(l.num_classes));
  detail::for_each_block<std::uint16_t>(l, out, f, [&](const std::vector<std::uint16_t> &b) {
    std::fill(counts.begin(), counts.end(), 0);
    for (auto x : b)
      ++counts[x];
    return static_cast<std::uint16_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  });
  return out;
}

inline Volume downsample(const Volume &v, int f) { return downsample(v, Factor{f, f, f}); }
inline LabelMap downsample(const LabelMap &l, int f) { return downsample(l, Factor{f, f, f}); }

/// Output voxel p takes the label at floor(p * dims / out_dims).
inline LabelMap upsample_labels_nn(const LabelMap &l, Dims out_dims) {
  require(out_dims.x >= l.dims.x && out_dims.y >= l.dims.y && out_dims.z >= l.dims.z, Errc::parameter,
          "upsample target " + to_string(out_dims) + " smaller than " + to_string(l.dims));
  LabelMap out(out_dims, l.num_classes);
  for (int a = 0; a < 3; ++a)
    out.spacing[static_cast<std::size_t>(a)] =
        l.spacing[static_cast<std::size_t>(a)] * double(l.dims[a]) / double(out_dims[a]);
  auto map_axis = [&](int axis) {
    std::vector<int> m(static_cast<std::size_t>(out_dims[axis]));
    for (int p = 0; p < out_dims[axis]; ++p)
      m[static_cast<std::size_t>(p)] =
          std::min(static_cast<int>(static_cast<long long>(p) * l.dims[axis] / out_dims[axis]), l.dims[axis] - 1);
    return m;
  };
  const auto mx = map_axis(0), my = map_axis(1), mz = map_axis(2);
  for (int z = 0; z < out_dims.z; ++z)
    for (int y = 0; y < out_dims.y; ++y)
      for (int x = 0; x < out_dims.x; ++x)
        out.at(x, y, z) = l.at(mx[static_cast<std::size_t>(x)], my[static_cast<std::size_t>(y)],
                               mz[static_cast<std::size_t>(z)]);
  return out;
}

/// Mirrors a grid along x (x -> Dx-1-x).
template <typename G> G flip_x(const G &g) {
  G out = g;
  for (int z = 0; z < g.dims.z; ++z)
    for (int y = 0; y < g.dims.y; ++y)
      for (int x = 0; x < g.dims.x; ++x)
        out.at(g.dims.x - 1 - x, y, z) = g.at(x, y, z);
  return out;
}

} // namespace asmnet
