/**
 * @file subject.hpp
 * @brief One case in normalized space: intensity, labels and the atlas prior.
 */
#pragma once

#include "asmnet/error.hpp"
#include "asmnet/volume.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace asmnet {

using LabelPair = std::pair<std::uint16_t, std::uint16_t>;

struct Subject {
  std::string id;
  Volume intensity;
  std::optional<LabelMap> ground_truth; ///< absent for inference-only subjects
  LabelMap mask;
  LabelMap prior;
  std::vector<LabelPair> swap_table; ///< (left, right) label pairs

  int num_classes() const { return prior.num_classes; }

  void validate() const {
    const Dims d = intensity.dims;
    require(mask.dims == d && prior.dims == d && (!ground_truth || ground_truth->dims == d), Errc::parameter,
            "subject " + id + ": volumes do not share dimensions");
    prior.validate();
    if (ground_truth) {
      ground_truth->validate();
      require(ground_truth->num_classes == prior.num_classes, Errc::parameter,
              "subject " + id + ": prior and ground truth disagree on the class count");
    }
    std::vector<bool> seen(static_cast<std::size_t>(prior.num_classes), false);
    for (const auto &[l, r] : swap_table) {
      require(l != r && l < prior.num_classes && r < prior.num_classes && l != 0 && r != 0, Errc::parameter,
              "subject " + id + ": invalid swap pair " + std::to_string(l) + "/" + std::to_string(r));
      require(!seen[l] && !seen[r], Errc::parameter, "subject " + id + ": label listed in two swap pairs");
      seen[l] = seen[r] = true;
    }
  }
};

} // namespace asmnet
