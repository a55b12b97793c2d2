/**
 * @file fusion.hpp
 * @brief Overcomplete majority voting over overlapping tile decisions.
 */
#pragma once

#include "asmnet/error.hpp"
#include "asmnet/tiling.hpp"
#include "asmnet/volume.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <tuple>
#include <vector>

namespace asmnet {

struct VoteAccumulator {
  Dims dims;
  int num_classes = 0;
  std::vector<std::uint32_t> hard_votes; ///< voxel-major, C per voxel
  std::vector<double> prob_sums;         ///< voxel-major, C per voxel
  std::vector<std::uint32_t> contributions;

  VoteAccumulator() = default;
  VoteAccumulator(Dims d, int classes)
      : dims(d), num_classes(classes), hard_votes(d.count() * static_cast<std::size_t>(classes), 0u),
        prob_sums(d.count() * static_cast<std::size_t>(classes), 0.0), contributions(d.count(), 0u) {
    require(classes >= 2, Errc::parameter, "vote accumulator needs at least 2 classes");
  }

  friend bool operator==(const VoteAccumulator &, const VoteAccumulator &) = default;
};

/// Adds one tile's soft decision: a hard vote for its argmax (ties to the
/// smallest class) and the raw probabilities.
inline void accumulate(VoteAccumulator &acc, const TileSpec &t, const ProbVolume &tile_probs) {
  require(tile_probs.num_classes == acc.num_classes, Errc::parameter,
          "tile has " + std::to_string(tile_probs.num_classes) + " classes, accumulator " +
              std::to_string(acc.num_classes));
  require(tile_probs.dims == t.size, Errc::parameter, "tile probabilities do not match tile size");
  for (int a = 0; a < 3; ++a)
    require(t.origin[static_cast<std::size_t>(a)] >= 0 && t.origin[static_cast<std::size_t>(a)] + t.size[a] <= acc.dims[a],
            Errc::parameter, "tile " + to_string(t.index) + " outside accumulator");
  const auto C = static_cast<std::size_t>(acc.num_classes);
  std::size_t q = 0;
  for (int z = 0; z < t.size.z; ++z)
    for (int y = 0; y < t.size.y; ++y)
      for (int x = 0; x < t.size.x; ++x, ++q) {
        const std::size_t v = static_cast<std::size_t>(t.origin[0] + x) +
                              static_cast<std::size_t>(acc.dims.x) *
                                  (static_cast<std::size_t>(t.origin[1] + y) +
                                   static_cast<std::size_t>(acc.dims.y) * static_cast<std::size_t>(t.origin[2] + z));
        const auto p = tile_probs.voxel(q);
        std::size_t best = 0;
        for (std::size_t c = 1; c < C; ++c)
          if (p[c] > p[best])
            best = c;
        ++acc.hard_votes[v * C + best];
        for (std::size_t c = 0; c < C; ++c)
          acc.prob_sums[v * C + c] += p[c];
        ++acc.contributions[v];
      }
}

enum class FusionMode {
  majority, ///< hard votes, ties by probability sum, then smallest class
  soft,     ///< argmax of probability sums, ties to the smallest class
};

struct FusionResult {
  LabelMap labels;
  std::optional<ProbVolume> mean_probs;
};

inline FusionResult finalize_majority(const VoteAccumulator &acc, bool with_probs = false,
                                      FusionMode mode = FusionMode::majority) {
  const auto C = static_cast<std::size_t>(acc.num_classes);
  FusionResult out{LabelMap(acc.dims, acc.num_classes), std::nullopt};
  if (with_probs)
    out.mean_probs.emplace(acc.dims, acc.num_classes);
  for (std::size_t v = 0; v < acc.dims.count(); ++v) {
    if (acc.contributions[v] == 0)
      fail(Errc::coverage, "voxel " + std::to_string(v) + " is not covered by any tile");
    const auto *votes = &acc.hard_votes[v * C];
    const auto *sums = &acc.prob_sums[v * C];
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c) {
      const bool better = mode == FusionMode::soft
                              ? sums[c] > sums[best]
                              : (votes[c] > votes[best] || (votes[c] == votes[best] && sums[c] > sums[best]));
      if (better)
        best = c;
    }
    out.labels.data[v] = static_cast<std::uint16_t>(best);
    if (with_probs) {
      auto p = out.mean_probs->voxel(v);
      for (std::size_t c = 0; c < C; ++c)
        p[c] = static_cast<float>(sums[c] / double(acc.contributions[v]));
    }
  }
  return out;
}

/**
 * Fuses one probability volume per tile. Tiles are accumulated in grid-index
 * order whatever order they are passed in, so the probability sums (and
 * therefore tie-breaks) are bit-reproducible.
 */
inline FusionResult fuse_tiles(Dims dims, int num_classes, const std::vector<TileSpec> &tiles,
                               const std::vector<ProbVolume> &tile_probs, bool with_probs = false,
                               FusionMode mode = FusionMode::majority) {
  require(tiles.size() == tile_probs.size(), Errc::parameter, "one probability volume per tile is required");
  std::vector<std::size_t> order(tiles.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto &ga = tiles[a].index, &gb = tiles[b].index;
    return std::tie(ga.k, ga.j, ga.i) < std::tie(gb.k, gb.j, gb.i);
  });
  VoteAccumulator acc(dims, num_classes);
  for (auto n : order)
    accumulate(acc, tiles[n], tile_probs[n]);
  return finalize_majority(acc, with_probs, mode);
}

} // namespace asmnet
