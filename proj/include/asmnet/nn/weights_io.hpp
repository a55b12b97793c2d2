/**
 * @file weights_io.hpp
 * @brief "ASMW0001" weight container.
 *
 * Layout: 8-byte magic "ASMW0001", little-endian uint64 manifest length,
 * JSON manifest (hyperparameters, array names, shapes, float offsets and
 * descending-path flags), then every array as raw little-endian float32.
 */
#pragma once

#include "asmnet/error.hpp"
#include "asmnet/nn/model.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace asmnet::nn {

inline constexpr char weights_magic[8] = {'A', 'S', 'M', 'W', '0', '0', '0', '1'};

inline nlohmann::json to_json(const ModelHyperparams &h) {
  return {{"in_channels", h.in_channels},   {"num_classes", h.num_classes}, {"base_filters", h.base_filters},
          {"depth", h.depth},               {"dropout", h.dropout},         {"learning_rate", h.learning_rate},
          {"beta1", h.beta1},               {"beta2", h.beta2},             {"adam_epsilon", h.adam_epsilon},
          {"dice_epsilon", h.dice_epsilon}};
}

inline ModelHyperparams hyperparams_from_json(const nlohmann::json &j) {
  ModelHyperparams h;
  h.in_channels = j.at("in_channels").get<int>();
  h.num_classes = j.at("num_classes").get<int>();
  h.base_filters = j.at("base_filters").get<int>();
  h.depth = j.at("depth").get<int>();
  h.dropout = j.at("dropout").get<double>();
  h.learning_rate = j.at("learning_rate").get<double>();
  h.beta1 = j.at("beta1").get<double>();
  h.beta2 = j.at("beta2").get<double>();
  h.adam_epsilon = j.at("adam_epsilon").get<double>();
  h.dice_epsilon = j.at("dice_epsilon").get<double>();
  return h;
}

inline void save_weights(const ModelWeights &w, const std::filesystem::path &path) {
  static_assert(std::endian::native == std::endian::little);
  nlohmann::json manifest;
  manifest["hyperparams"] = to_json(w.hyper);
  auto &arrays = manifest["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto &a : w.arrays) {
    arrays.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", a.values.size()},
                      {"descending", a.descending}});
    offset += a.values.size();
  }
  manifest["total"] = offset;
  const std::string text = manifest.dump();
  const std::uint64_t len = text.size();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), Errc::io, "cannot open " + path.string() + " for writing");
  out.write(weights_magic, sizeof weights_magic);
  out.write(reinterpret_cast<const char *>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto &a : w.arrays)
    out.write(reinterpret_cast<const char *>(a.values.data()), static_cast<std::streamsize>(a.values.size() * sizeof(float)));
  require(static_cast<bool>(out), Errc::io, "write failed for " + path.string());
}

inline ModelWeights load_weights(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::io, "cannot open " + path.string());
  char magic[8] = {};
  in.read(magic, sizeof magic);
  require(in.gcount() == sizeof magic && std::memcmp(magic, weights_magic, sizeof magic) == 0, Errc::format,
          path.string() + ": bad magic, not an ASMW0001 weight file");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char *>(&len), sizeof len);
  require(in.gcount() == sizeof len && len < (1u << 26), Errc::format, path.string() + ": bad manifest length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  require(static_cast<std::uint64_t>(in.gcount()) == len, Errc::format, path.string() + ": truncated manifest");

  ModelWeights w;
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
    w.hyper = hyperparams_from_json(manifest.at("hyperparams"));
    std::uint64_t expected_offset = 0;
    for (const auto &a : manifest.at("arrays")) {
      NamedArray<float> arr;
      arr.name = a.at("name").get<std::string>();
      arr.shape = a.at("shape").get<std::vector<int>>();
      arr.descending = a.at("descending").get<bool>();
      const auto count = a.at("count").get<std::uint64_t>();
      std::uint64_t prod = 1;
      for (int d : arr.shape)
        prod *= static_cast<std::uint64_t>(d);
      require(prod == count, Errc::format, path.string() + ": shape of " + arr.name + " disagrees with its count");
      require(a.at("offset").get<std::uint64_t>() == expected_offset, Errc::format,
              path.string() + ": non-contiguous offset for " + arr.name);
      expected_offset += count;
      arr.values.resize(count);
      w.arrays.push_back(std::move(arr));
    }
  } catch (const nlohmann::json::exception &e) {
    fail(Errc::format, path.string() + ": malformed manifest: " + e.what());
  }
  for (auto &a : w.arrays) {
    const auto bytes = static_cast<std::streamsize>(a.values.size() * sizeof(float));
    in.read(reinterpret_cast<char *>(a.values.data()), bytes);
    require(in.gcount() == bytes, Errc::format, path.string() + ": truncated data in " + a.name);
  }
  in.peek();
  require(in.eof(), Errc::format, path.string() + ": trailing bytes after weight data");

  // The manifest must describe exactly the architecture its hyperparameters imply.
  const auto reference = zeros_like<float>(init_model(w.hyper, 0));
  require(reference.arrays.size() == w.arrays.size(), Errc::format, path.string() + ": array count mismatch");
  for (std::size_t i = 0; i < w.arrays.size(); ++i)
    require(reference.arrays[i].name == w.arrays[i].name && reference.arrays[i].shape == w.arrays[i].shape &&
                reference.arrays[i].descending == w.arrays[i].descending,
            Errc::format, path.string() + ": array " + w.arrays[i].name + " does not match the architecture");
  return w;
}

} // namespace asmnet::nn
