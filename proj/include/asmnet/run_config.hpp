/**
 * @file run_config.hpp
 * @brief Experiment configuration: `key = value` lines, `#` comments.
 *
 * Keys are dotted (`coarse.epochs`, `phantom.dims`). Unknown keys are
 * rejected. Command-line `--set key=value` overrides go through the same
 * parser, so a run is fully described by its file plus its overrides.
 */
#pragma once

#include "asmnet/error.hpp"
#include "asmnet/pipeline.hpp"
#include "asmnet/seed.hpp"
#include "asmnet/synth.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace asmnet {

struct RunConfig {
  std::filesystem::path data_dir;
  std::filesystem::path model_dir;
  std::filesystem::path output_dir = "predictions";
  int n_train = 20;
  int n_test = 5;
  PhantomSpec phantom;
  AssemblyConfig coarse = AssemblyConfig::coarse_defaults();
  AssemblyConfig fine = AssemblyConfig::fine_defaults();
  int workers = 1;
  std::uint64_t seed = 0;
  bool cascade = true;
  std::set<std::string> assigned; ///< keys given explicitly

  /// Per-module seeds derived from the single run seed.
  void propagate_seed() {
    phantom.seed = derive_seed(seed, {0});
    coarse.seed = derive_seed(seed, {1});
    fine.seed = derive_seed(seed, {2});
  }

  void require_keys(std::initializer_list<const char *> keys, const std::string &command) const {
    for (const char *k : keys)
      require(assigned.count(k) != 0, Errc::configuration, command + " needs '" + k + "' in the configuration");
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  s.erase(0, s.find_first_not_of(ws));
  s.erase(s.find_last_not_of(ws) + 1);
  return s;
}

template <typename T> T parse_number(const std::string &key, const std::string &v) {
  T out{};
  const auto *end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  require(ec == std::errc() && p == end, Errc::configuration, "key '" + key + "': cannot parse '" + v + "'");
  return out;
}

inline double parse_double(const std::string &key, const std::string &v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos == v.size())
      return d;
  } catch (const std::exception &) {
  }
  fail(Errc::configuration, "key '" + key + "': cannot parse '" + v + "' as a number");
}

inline bool parse_bool(const std::string &key, const std::string &v) {
  if (v == "true" || v == "on" || v == "yes" || v == "1")
    return true;
  if (v == "false" || v == "off" || v == "no" || v == "0")
    return false;
  fail(Errc::configuration, "key '" + key + "': expected true/false, got '" + v + "'");
}

/// "48" for a cube, or "32 48 32".
inline Dims parse_dims(const std::string &key, const std::string &v) {
  std::istringstream in(v);
  std::vector<int> xs;
  std::string tok;
  while (in >> tok)
    xs.push_back(parse_number<int>(key, tok));
  require(xs.size() == 1 || xs.size() == 3, Errc::configuration, "key '" + key + "': expected 1 or 3 integers");
  return xs.size() == 1 ? Dims{xs[0], xs[0], xs[0]} : Dims{xs[0], xs[1], xs[2]};
}

using Setter = std::function<void(RunConfig &, const std::string &, const std::string &)>;

inline void add_scale_keys(std::map<std::string, Setter> &m, const std::string &prefix,
                           AssemblyConfig RunConfig::*member) {
  m[prefix + ".k"] = [member](RunConfig &c, auto &k, auto &v) { (c.*member).K = parse_number<int>(k, v); };
  m[prefix + ".tile"] = [member](RunConfig &c, auto &k, auto &v) { (c.*member).tile_size = parse_dims(k, v); };
  m[prefix + ".downsample_factor"] = [member](RunConfig &c, auto &k, auto &v) {
    (c.*member).downsample_factor = parse_number<int>(k, v);
  };
  m[prefix + ".base_filters"] = [member](RunConfig &c, auto &k, auto &v) {
    (c.*member).model.base_filters = parse_number<int>(k, v);
  };
  m[prefix + ".depth"] = [member](RunConfig &c, auto &k, auto &v) { (c.*member).model.depth = parse_number<int>(k, v); };
  m[prefix + ".dropout"] = [member](RunConfig &c, auto &k, auto &v) { (c.*member).model.dropout = parse_double(k, v); };
  m[prefix + ".learning_rate"] = [member](RunConfig &c, auto &k, auto &v) {
    (c.*member).model.learning_rate = parse_double(k, v);
  };
  m[prefix + ".epochs"] = [member](RunConfig &c, auto &k, auto &v) { (c.*member).epochs = parse_number<int>(k, v); };
  m[prefix + ".swa_epochs"] = [member](RunConfig &c, auto &k, auto &v) {
    (c.*member).swa_epochs = parse_number<int>(k, v);
  };
}

/// Switches that apply to both scales.
template <typename F> Setter both_scales(F f) {
  return [f](RunConfig &c, const std::string &k, const std::string &v) {
    f(c.coarse, k, v);
    f(c.fine, k, v);
  };
}

inline const std::map<std::string, Setter> &setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> m;
    m["data_dir"] = [](RunConfig &c, auto &, auto &v) { c.data_dir = v; };
    m["model_dir"] = [](RunConfig &c, auto &, auto &v) { c.model_dir = v; };
    m["output_dir"] = [](RunConfig &c, auto &, auto &v) { c.output_dir = v; };
    m["seed"] = [](RunConfig &c, auto &k, auto &v) { c.seed = parse_number<std::uint64_t>(k, v); };
    m["workers"] = [](RunConfig &c, auto &k, auto &v) { c.workers = parse_number<int>(k, v); };
    m["n_train"] = [](RunConfig &c, auto &k, auto &v) { c.n_train = parse_number<int>(k, v); };
    m["n_test"] = [](RunConfig &c, auto &k, auto &v) { c.n_test = parse_number<int>(k, v); };
    m["phantom.dims"] = [](RunConfig &c, auto &k, auto &v) { c.phantom.dims = parse_dims(k, v); };
    m["phantom.classes"] = [](RunConfig &c, auto &k, auto &v) {
      c.phantom.num_classes = parse_number<int>(k, v);
      c.coarse.model.num_classes = c.fine.model.num_classes = c.phantom.num_classes;
    };
    m["phantom.noise_sigma"] = [](RunConfig &c, auto &k, auto &v) { c.phantom.noise_sigma = parse_double(k, v); };
    m["phantom.jitter_voxels"] = [](RunConfig &c, auto &k, auto &v) { c.phantom.jitter_voxels = parse_double(k, v); };
    m["phantom.radius_jitter"] = [](RunConfig &c, auto &k, auto &v) { c.phantom.radius_jitter = parse_double(k, v); };
    m["phantom.prior_shift"] = [](RunConfig &c, auto &k, auto &v) { c.phantom.prior_shift = parse_double(k, v); };
    add_scale_keys(m, "coarse", &RunConfig::coarse);
    add_scale_keys(m, "fine", &RunConfig::fine);
    m["cascade"] = [](RunConfig &c, auto &k, auto &v) { c.cascade = parse_bool(k, v); };
    m["prior"] = both_scales([](AssemblyConfig &a, auto &k, auto &v) { a.use_prior = parse_bool(k, v); });
    m["transfer"] = both_scales([](AssemblyConfig &a, auto &k, auto &v) { a.transfer = parse_bool(k, v); });
    m["mixup"] = both_scales([](AssemblyConfig &a, auto &k, auto &v) { a.mixup = parse_bool(k, v); });
    m["mixup_alpha"] = both_scales([](AssemblyConfig &a, auto &k, auto &v) { a.mixup_alpha = parse_double(k, v); });
    m["flip"] = both_scales([](AssemblyConfig &a, auto &k, auto &v) { a.flip = parse_bool(k, v); });
    m["mc_passes"] = both_scales([](AssemblyConfig &a, auto &k, auto &v) { a.mc_passes = parse_number<int>(k, v); });
    return m;
  }();
  return table;
}

} // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto &[k, _] : detail::setters())
    keys.push_back(k);
  return keys;
}

inline void set_config_value(RunConfig &cfg, const std::string &key, const std::string &value) {
  const auto &table = detail::setters();
  const auto it = table.find(key);
  require(it != table.end(), Errc::configuration, "unknown configuration key '" + key + "'");
  it->second(cfg, key, value);
  cfg.assigned.insert(key);
  cfg.propagate_seed();
}

/// Applies one `key=value` override.
inline void apply_override(RunConfig &cfg, const std::string &assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos, Errc::usage, "override '" + assignment + "' is not key=value");
  set_config_value(cfg, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

inline RunConfig parse_config(std::istream &in, const std::string &source = "<config>") {
  RunConfig cfg;
  cfg.propagate_seed();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    line = detail::trim(line);
    if (line.empty())
      continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, Errc::configuration,
            source + ":" + std::to_string(lineno) + ": expected key = value");
    try {
      set_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const Error &e) {
      fail(e.code(), source + ":" + std::to_string(lineno) + ": " + e.message());
    }
  }
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), Errc::usage, "cannot open config file " + path.string());
  auto cfg = parse_config(in, path.string());
  // Relative paths resolve against the config file's directory.
  for (auto *p : {&cfg.data_dir, &cfg.model_dir, &cfg.output_dir})
    if (!p->empty() && p->is_relative())
      *p = path.parent_path() / *p;
  return cfg;
}

} // namespace asmnet
