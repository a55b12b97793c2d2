/**
 * @file tiling.hpp
 * @brief Regular grid of overlapping sub-volumes ("territories") and tile
 * extraction.
 *
 * Origins along an axis are spread evenly between 0 and D - w, rounding half
 * up, so the first and last tiles are flush with the volume boundary.
 */
#pragma once

#include "asmnet/error.hpp"
#include "asmnet/volume.hpp"

#include <array>
#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace asmnet {

struct GridIndex {
  int i = 0, j = 0, k = 0;
  friend constexpr bool operator==(const GridIndex &, const GridIndex &) = default;
};

inline std::string to_string(const GridIndex &g) {
  return "(" + std::to_string(g.i) + "," + std::to_string(g.j) + "," + std::to_string(g.k) + ")";
}

/// Linear position of a grid index with i fastest.
constexpr int linear_index(GridIndex g, int K) { return g.i + K * (g.j + K * g.k); }
constexpr GridIndex grid_index(int linear, int K) { return {linear % K, (linear / K) % K, linear / (K * K)}; }

struct TileSpec {
  GridIndex index;
  std::array<int, 3> origin{};
  Dims size;

  bool contains(int x, int y, int z) const {
    return x >= origin[0] && y >= origin[1] && z >= origin[2] && x < origin[0] + size.x &&
           y < origin[1] + size.y && z < origin[2] + size.z;
  }
};

struct AssemblyGrid {
  int K = 1;
  Dims dims;
  Dims tile_size;
  std::vector<TileSpec> tiles;               ///< K^3 tiles, i fastest then j then k
  std::array<int, 3> min_overlap{};          ///< smallest neighbour overlap per axis (tile width when K == 1)
  std::vector<std::string> warnings;

  const TileSpec &tile(GridIndex g) const { return tiles[static_cast<std::size_t>(linear_index(g, K))]; }
};

inline std::vector<int> tile_origins(int D, int w, int K) {
  require(K >= 1, Errc::parameter, "tile count must be >= 1");
  require(w >= 1, Errc::parameter, "tile width must be >= 1");
  require(w <= D, Errc::parameter, "tile width " + std::to_string(w) + " exceeds axis length " + std::to_string(D));
  const long long slack = D - w;
  if (K == 1)
    return {static_cast<int>(slack / 2)};
  std::vector<int> origins(static_cast<std::size_t>(K));
  // floor(i * slack / (K - 1) + 1/2) in exact integer arithmetic.
  for (int i = 0; i < K; ++i)
    origins[static_cast<std::size_t>(i)] = static_cast<int>((2LL * i * slack + (K - 1)) / (2LL * (K - 1)));
  return origins;
}

inline AssemblyGrid build_grid(Dims dims, Dims tile_size, int K) {
  static constexpr const char *axis_name[] = {"x", "y", "z"};
  require(dims.valid() && tile_size.valid(), Errc::parameter, "grid and tile dims must be positive");
  AssemblyGrid g;
  g.K = K;
  g.dims = dims;
  g.tile_size = tile_size;

  std::array<std::vector<int>, 3> origins;
  for (int a = 0; a < 3; ++a) {
    require(tile_size[a] <= dims[a], Errc::parameter,
            std::string("tile too large along ") + axis_name[a] + ": " + std::to_string(tile_size[a]) + " > " +
                std::to_string(dims[a]));
    origins[static_cast<std::size_t>(a)] = tile_origins(dims[a], tile_size[a], K);
    const int w = tile_size[a];
    int min_ov = w;
    for (int i = 0; i + 1 < K; ++i) {
      const auto &o = origins[static_cast<std::size_t>(a)];
      min_ov = std::min(min_ov, w - (o[static_cast<std::size_t>(i) + 1] - o[static_cast<std::size_t>(i)]));
    }
    g.min_overlap[static_cast<std::size_t>(a)] = min_ov;
    if (K > 1) {
      require(min_ov >= w / 2 - 1, Errc::configuration,
              std::string("axis ") + axis_name[a] + ": neighbour overlap " + std::to_string(min_ov) +
                  " is below the minimum " + std::to_string(w / 2 - 1) + " for tile width " + std::to_string(w));
      // For w <= 3 the threshold alone would admit gaps.
      require(min_ov >= 0, Errc::configuration,
              std::string("axis ") + axis_name[a] + ": tiles leave gaps of " + std::to_string(-min_ov) + " voxels");
      if (min_ov < (w + 1) / 2)
        g.warnings.push_back(std::string("axis ") + axis_name[a] + ": overlap " + std::to_string(min_ov) +
                             " is slightly under 50% of " + std::to_string(w));
    }
    // Flush ends plus non-negative overlaps cover the axis; one tile must span it.
    if (K == 1)
      require(tile_size[a] == dims[a], Errc::configuration,
              std::string("a single tile leaves voxels uncovered along ") + axis_name[a]);
  }

  g.tiles.reserve(static_cast<std::size_t>(K) * K * K);
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < K; ++j)
      for (int i = 0; i < K; ++i)
        g.tiles.push_back(TileSpec{{i, j, k},
                                   {origins[0][static_cast<std::size_t>(i)], origins[1][static_cast<std::size_t>(j)],
                                    origins[2][static_cast<std::size_t>(k)]},
                                   tile_size});
  return g;
}

/// One line per tile: linear index, grid index, origin, size.
inline void write_grid(std::ostream &os, const AssemblyGrid &g) {
  os << "# K=" << g.K << " dims=" << to_string(g.dims) << " tile=" << to_string(g.tile_size) << "\n";
  for (std::size_t n = 0; n < g.tiles.size(); ++n) {
    const auto &t = g.tiles[n];
    os << n << " " << to_string(t.index) << " origin=(" << t.origin[0] << "," << t.origin[1] << "," << t.origin[2]
       << ") size=" << to_string(t.size) << "\n";
  }
}

/// Multi-channel crop, channel-major then x-fastest inside each channel.
struct TileArray {
  int channels = 0;
  Dims dims;
  std::vector<float> data;

  float &at(int c, int x, int y, int z) {
    return data[static_cast<std::size_t>(c) * dims.count() + static_cast<std::size_t>(x) +
                static_cast<std::size_t>(dims.x) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims.y) * z)];
  }
  float at(int c, int x, int y, int z) const { return const_cast<TileArray *>(this)->at(c, x, y, z); }
  std::span<const float> channel(int c) const {
    return {data.data() + static_cast<std::size_t>(c) * dims.count(), dims.count()};
  }
};

inline TileArray extract_tile(std::span<const Volume> channels, const TileSpec &t) {
  require(!channels.empty(), Errc::parameter, "no channels to extract");
  const Dims d = channels.front().dims;
  for (const auto &c : channels)
    require(c.dims == d, Errc::parameter, "channel dims " + to_string(c.dims) + " != " + to_string(d));
  for (int a = 0; a < 3; ++a)
    require(t.origin[static_cast<std::size_t>(a)] >= 0 && t.origin[static_cast<std::size_t>(a)] + t.size[a] <= d[a],
            Errc::parameter, "tile " + to_string(t.index) + " exceeds volume bounds");
  TileArray out{static_cast<int>(channels.size()), t.size, {}};
  out.data.resize(channels.size() * t.size.count());
  float *dst = out.data.data();
  for (const auto &c : channels)
    for (int z = 0; z < t.size.z; ++z)
      for (int y = 0; y < t.size.y; ++y) {
        const float *src = &c.at(t.origin[0], t.origin[1] + y, t.origin[2] + z);
        dst = std::copy(src, src + t.size.x, dst);
      }
  return out;
}

inline TileArray extract_tile(const std::vector<Volume> &channels, const TileSpec &t) {
  return extract_tile(std::span<const Volume>(channels), t);
}

/// Crops a label map to a tile.
inline LabelMap extract_labels(const LabelMap &l, const TileSpec &t) {
  LabelMap out(t.size, l.num_classes);
  for (int z = 0; z < t.size.z; ++z)
    for (int y = 0; y < t.size.y; ++y)
      for (int x = 0; x < t.size.x; ++x)
        out.at(x, y, z) = l.at(t.origin[0] + x, t.origin[1] + y, t.origin[2] + z);
  return out;
}

/// Number of tiles covering each voxel.
inline Grid3<std::uint32_t> coverage_map(const AssemblyGrid &g) {
  Grid3<std::uint32_t> count(g.dims, 0u);
  for (const auto &t : g.tiles)
    for (int z = t.origin[2]; z < t.origin[2] + t.size.z; ++z)
      for (int y = t.origin[1]; y < t.origin[1] + t.size.y; ++y)
        for (int x = t.origin[0]; x < t.origin[0] + t.size.x; ++x)
          ++count.at(x, y, z);
  return count;
}

} // namespace asmnet
