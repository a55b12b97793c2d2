/**
 * @file pipeline.hpp
 * @brief Training and inference for one assembly, and the coarse-to-fine
 * cascade.
 *
 * Every node draws its randomness from derive_seed(config seed, node), so a
 * trained assembly does not depend on the worker count or on which valid
 * training order was used.
 */
#pragma once

#include "asmnet/error.hpp"
#include "asmnet/fusion.hpp"
#include "asmnet/nn/fpenv.hpp"
#include "asmnet/nn/model.hpp"
#include "asmnet/nn/optim.hpp"
#include "asmnet/nn/weights_io.hpp"
#include "asmnet/seed.hpp"
#include "asmnet/subject.hpp"
#include "asmnet/tiling.hpp"
#include "asmnet/transfer.hpp"
#include "asmnet/volume.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace asmnet {

enum class Scale { coarse, fine };

inline std::string to_string(Scale s) { return s == Scale::coarse ? "coarse" : "fine"; }

inline Scale parse_scale(const std::string &s) {
  if (s == "coarse")
    return Scale::coarse;
  if (s == "fine")
    return Scale::fine;
  fail(Errc::configuration, "unknown scale '" + s + "' (expected coarse or fine)");
}

struct AssemblyConfig {
  Scale scale = Scale::coarse;
  int downsample_factor = 2; ///< subject dims / assembly dims, per axis
  int K = 3;
  Dims tile_size{12, 12, 12};
  nn::ModelHyperparams model{};
  int epochs = 30;
  int swa_epochs = 5;
  bool mixup = true;
  double mixup_alpha = 0.2;
  bool flip = true;
  bool transfer = true;
  bool use_prior = true;
  int mc_passes = 3;
  std::uint64_t seed = 0;

  static AssemblyConfig coarse_defaults() { return {}; }

  static AssemblyConfig fine_defaults() {
    AssemblyConfig c;
    c.scale = Scale::fine;
    c.downsample_factor = 1;
    c.tile_size = {24, 24, 24};
    c.model.in_channels = 3;
    return c;
  }

  int expected_channels() const { return scale == Scale::coarse ? 2 : 3; }

  Dims assembly_dims(Dims subject) const {
    return downsampled_dims(subject, Factor{downsample_factor, downsample_factor, downsample_factor});
  }

  void validate() const {
    model.validate();
    require(model.in_channels == expected_channels(), Errc::configuration,
            to_string(scale) + " assembly needs " + std::to_string(expected_channels()) + " input channels, got " +
                std::to_string(model.in_channels));
    require(downsample_factor >= 1, Errc::configuration, "downsample_factor must be >= 1");
    require(K >= 1, Errc::configuration, "K must be >= 1");
    require(model.accepts_tile(tile_size), Errc::configuration,
            "tile size " + to_string(tile_size) + " is not divisible by 2^" + std::to_string(model.depth));
    require(epochs >= 0 && swa_epochs >= 0, Errc::configuration, "epoch counts must be >= 0");
    require(mixup_alpha > 0.0, Errc::configuration, "mixup_alpha must be positive");
    require(mc_passes >= 1, Errc::configuration, "mc_passes must be >= 1");
  }

  friend bool operator==(const AssemblyConfig &, const AssemblyConfig &) = default;
};

struct AssemblyModel {
  AssemblyConfig config;
  AssemblyGrid grid;
  std::vector<nn::ModelWeights> nodes; ///< indexed by linear_index

  const nn::ModelWeights &node(GridIndex g) const { return nodes[static_cast<std::size_t>(linear_index(g, grid.K))]; }

  void validate() const {
    config.validate();
    require(grid.K == config.K && grid.tile_size == config.tile_size, Errc::configuration,
            "assembly grid does not match its configuration");
    require(nodes.size() == grid.tiles.size(), Errc::configuration,
            "assembly has " + std::to_string(nodes.size()) + " models for " + std::to_string(grid.tiles.size()) +
                " tiles");
    for (const auto &w : nodes)
      require(w.hyper == config.model, Errc::configuration, "member hyperparameters differ from the configuration");
  }
};

// Channels and augmentation -------------------------------------------------

/// Label l encodes as l / (C - 1).
inline Volume encode_labels(const LabelMap &l) {
  require(l.num_classes >= 2, Errc::parameter, "label encoding needs at least 2 classes");
  Volume out(l.dims);
  out.copy_geometry(l);
  const float scale = 1.f / float(l.num_classes - 1);
  for (std::size_t v = 0; v < l.size(); ++v)
    out.data[v] = float(l.data[v]) * scale;
  return out;
}

/**
 * Channel 0: intensity normalized over the mask; channel 1: prior labels
 * (zeros when the prior is disabled); channel 2 (fine only): coarse labels.
 * Coarse channels are downsampled by the configured factor.
 */
inline std::vector<Volume> prepare_channels(const Subject &s, const AssemblyConfig &cfg,
                                            const std::optional<LabelMap> &coarse_seg = std::nullopt) {
  if (cfg.scale == Scale::fine)
    require(coarse_seg.has_value(), Errc::pipeline, "fine assembly needs a coarse segmentation for " + s.id);
  else
    require(!coarse_seg.has_value(), Errc::pipeline, "coarse assembly does not take a coarse segmentation");
  Volume intensity = normalize_intensity(s.intensity, s.mask);
  LabelMap prior = s.prior;
  if (cfg.downsample_factor > 1) {
    intensity = downsample(intensity, cfg.downsample_factor);
    prior = downsample(prior, cfg.downsample_factor);
  }
  std::vector<Volume> ch;
  ch.push_back(std::move(intensity));
  Volume p = encode_labels(prior);
  if (!cfg.use_prior)
    std::fill(p.data.begin(), p.data.end(), 0.f);
  ch.push_back(std::move(p));
  if (coarse_seg) {
    require(coarse_seg->dims == ch.front().dims, Errc::pipeline,
            "coarse segmentation dims " + to_string(coarse_seg->dims) + " != " + to_string(ch.front().dims));
    ch.push_back(encode_labels(*coarse_seg));
  }
  return ch;
}

inline LabelMap swap_labels(const LabelMap &l, const std::vector<LabelPair> &table) {
  std::vector<std::uint16_t> map(static_cast<std::size_t>(std::max(l.num_classes, 1)));
  for (std::size_t c = 0; c < map.size(); ++c)
    map[c] = static_cast<std::uint16_t>(c);
  for (const auto &[a, b] : table) {
    map[a] = b;
    map[b] = a;
  }
  LabelMap out = l;
  for (auto &v : out.data)
    v = map[v];
  return out;
}

/// Mirror along x with left/right labels exchanged.
inline Subject flip_subject(const Subject &s) {
  require(!s.swap_table.empty(), Errc::configuration, "subject " + s.id + " has no left/right swap table");
  s.validate();
  Subject out;
  out.id = s.id.ends_with("_flip") ? s.id.substr(0, s.id.size() - 5) : s.id + "_flip";
  out.intensity = flip_x(s.intensity);
  if (s.ground_truth)
    out.ground_truth = swap_labels(flip_x(*s.ground_truth), s.swap_table);
  out.mask = flip_x(s.mask);
  out.prior = swap_labels(flip_x(s.prior), s.swap_table);
  out.swap_table = s.swap_table;
  return out;
}

struct Sample {
  TileArray x;
  std::vector<float> y; ///< class-major soft target
};

/// x = lambda*a.x + (1-lambda)*b.x, and likewise for the targets.
inline Sample mixup(const Sample &a, const Sample &b, double lambda) {
  require(a.x.channels == b.x.channels && a.x.dims == b.x.dims && a.y.size() == b.y.size() &&
              a.x.data.size() == b.x.data.size(),
          Errc::parameter, "mixup: sample shapes differ");
  require(lambda >= 0.0 && lambda <= 1.0, Errc::parameter, "mixup: lambda must be in [0, 1]");
  if (lambda == 1.0)
    return a;
  Sample out = a;
  const float l = static_cast<float>(lambda), m = static_cast<float>(1.0 - lambda);
  for (std::size_t i = 0; i < out.x.data.size(); ++i)
    out.x.data[i] = l * a.x.data[i] + m * b.x.data[i];
  for (std::size_t i = 0; i < out.y.size(); ++i)
    out.y[i] = l * a.y[i] + m * b.y[i];
  return out;
}

inline double sample_beta(double alpha, std::mt19937_64 &rng) {
  std::gamma_distribution<double> g(alpha, 1.0);
  const double a = g(rng), b = g(rng);
  return a + b > 0.0 ? a / (a + b) : 0.5;
}

// Training -------------------------------------------------------------------

struct NodeTiming {
  GridIndex node;
  int worker = 0;
  double start = 0.0; ///< seconds since the start of training
  double finish = 0.0;
  double final_loss = 0.0;
};

struct TrainReport {
  std::vector<NodeTiming> timings; ///< indexed by linear_index
  double makespan = 0.0;
  int workers = 1;

  /// Simulated plan replaying the measured per-node durations.
  SchedulePlan replay(int K, int P) const {
    std::vector<double> d;
    for (const auto &t : timings)
      d.push_back(std::max(t.finish - t.start, 1e-9));
    return simulate_schedule(K, d, P);
  }
};

struct TrainHooks {
  /// Weights a node starts from, before its first step.
  std::function<void(GridIndex, const nn::ModelWeights &)> on_init;
  /// Mean training loss after each epoch (SWA epochs continue the count).
  std::function<void(GridIndex, int, double)> on_epoch;
  std::function<void(GridIndex, const nn::ModelWeights &)> on_final;
};

/// Produces the coarse segmentation (at subject dims) fed to the fine assembly.
using CoarseProvider = std::function<LabelMap(const Subject &)>;

struct TrainOptions {
  int workers = 1;
  std::optional<std::vector<GridIndex>> order; ///< priority among ready nodes; canonical when unset
  TrainHooks hooks;
  std::ostream *log = nullptr; ///< one line per event
};

namespace detail {

struct PreparedSubject {
  std::vector<Volume> channels;
  LabelMap target;
};

inline std::vector<PreparedSubject> prepare_training_set(const std::vector<Subject> &dataset,
                                                         const AssemblyConfig &cfg, const CoarseProvider &coarse) {
  std::vector<Subject> all;
  for (const auto &s : dataset) {
    require(s.ground_truth.has_value(), Errc::pipeline, "training subject " + s.id + " has no ground truth");
    all.push_back(s);
    if (cfg.flip)
      all.push_back(flip_subject(s));
  }
  std::vector<PreparedSubject> out;
  for (const auto &s : all) {
    require(s.num_classes() == cfg.model.num_classes, Errc::configuration,
            "subject " + s.id + " has " + std::to_string(s.num_classes()) + " classes, model expects " +
                std::to_string(cfg.model.num_classes));
    std::optional<LabelMap> cs;
    if (cfg.scale == Scale::fine)
      cs = coarse(s);
    PreparedSubject p{prepare_channels(s, cfg, cs), *s.ground_truth};
    if (cfg.downsample_factor > 1)
      p.target = downsample(p.target, cfg.downsample_factor);
    out.push_back(std::move(p));
  }
  return out;
}

inline nn::ModelWeights train_node(const AssemblyConfig &cfg, const TileSpec &tile,
                                   const std::vector<PreparedSubject> &data, nn::ModelWeights w,
                                   const TrainHooks &hooks, std::mutex &hook_mutex, double &final_loss) {
  const nn::FlushDenormals ftz;
  const int lin = linear_index(tile.index, cfg.K);
  std::mt19937_64 rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(lin), 1}));
  std::vector<Sample> samples;
  samples.reserve(data.size());
  for (const auto &p : data)
    samples.push_back({extract_tile(p.channels, tile), nn::one_hot(extract_labels(p.target, tile))});

  auto opt = nn::make_optimizer_state(w);
  std::optional<nn::SwaState> swa;
  std::vector<std::size_t> perm(samples.size());
  const int total = cfg.epochs + cfg.swa_epochs;
  for (int epoch = 0; epoch < total; ++epoch) {
    if (epoch == cfg.epochs)
      swa = nn::swa_update(std::nullopt, w); // the epoch-E weights are the first snapshot
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    double loss = 0.0;
    for (auto a : perm) {
      if (cfg.mixup) {
        const auto b = static_cast<std::size_t>(rng() % samples.size());
        const double lambda = sample_beta(cfg.mixup_alpha, rng);
        const auto s = mixup(samples[a], samples[b], lambda);
        loss += nn::train_step(w, opt, s.x, s.y, rng, cfg.model.learning_rate);
      } else {
        loss += nn::train_step(w, opt, samples[a].x, samples[a].y, rng, cfg.model.learning_rate);
      }
    }
    loss /= double(samples.size());
    final_loss = loss;
    if (epoch >= cfg.epochs)
      swa = nn::swa_update(std::move(swa), w);
    if (hooks.on_epoch) {
      std::lock_guard lock(hook_mutex);
      hooks.on_epoch(tile.index, epoch, loss);
    }
  }
  if (swa)
    w = swa->weights();
  return w;
}

} // namespace detail

/**
 * Trains all K^3 members. Node (0,0,0) starts from scratch; with transfer on,
 * every other node starts from its predecessor's final weights on the
 * descending path and fresh weights elsewhere. Each node runs `epochs` epochs
 * over the (flip-doubled) dataset, then `swa_epochs` more whose snapshots,
 * together with the epoch-E weights, are averaged into the final model.
 */
inline AssemblyModel train_assembly(const std::vector<Subject> &dataset, const AssemblyConfig &cfg,
                                    const CoarseProvider &coarse = {}, TrainOptions opts = {},
                                    TrainReport *report = nullptr) {
  cfg.validate();
  require(!dataset.empty(), Errc::pipeline, "training needs at least one subject");
  require(opts.workers >= 1, Errc::configuration, "worker count must be >= 1");
  require(cfg.scale == Scale::coarse || static_cast<bool>(coarse), Errc::pipeline,
          "fine assembly training needs a coarse segmentation provider");
  const Dims dims = cfg.assembly_dims(dataset.front().intensity.dims);
  for (const auto &s : dataset)
    require(s.intensity.dims == dataset.front().intensity.dims, Errc::pipeline, "training subjects differ in dims");

  AssemblyModel model;
  model.config = cfg;
  model.grid = build_grid(dims, cfg.tile_size, cfg.K);
  const auto data = detail::prepare_training_set(dataset, cfg, coarse);

  const int K = cfg.K;
  const auto n = static_cast<std::size_t>(K * K * K);
  const auto order = opts.order ? *opts.order : topological_order(K);
  require(is_valid_order(order, K), Errc::configuration, "training order does not respect the transfer DAG");
  model.nodes.resize(n);

  std::vector<NodeTiming> timings(n);
  std::vector<bool> started(n, false), done(n, false);
  std::size_t next_hint = 0, finished = 0;
  std::exception_ptr error;
  std::string error_node;
  std::mutex mu, hook_mu;
  std::condition_variable cv;
  const auto t0 = std::chrono::steady_clock::now();
  auto seconds = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  auto dependency = [&](GridIndex g) { return cfg.transfer ? predecessor(g, K) : std::nullopt; };

  auto log_line = [&](const std::string &s) {
    if (opts.log)
      *opts.log << s << '\n';
  };

  auto worker = [&](int wid) {
    for (;;) {
      GridIndex g;
      {
        std::unique_lock lock(mu);
        std::optional<GridIndex> pick;
        cv.wait(lock, [&] {
          if (error || finished == n)
            return true;
          for (std::size_t p = next_hint; p < order.size(); ++p) {
            const auto id = static_cast<std::size_t>(linear_index(order[p], K));
            if (started[id])
              continue;
            const auto d = dependency(order[p]);
            if (!d || done[static_cast<std::size_t>(linear_index(*d, K))]) {
              pick = order[p];
              return true;
            }
          }
          return false;
        });
        if (!pick)
          return;
        g = *pick;
        const auto id = static_cast<std::size_t>(linear_index(g, K));
        started[id] = true;
        while (next_hint < order.size() && started[static_cast<std::size_t>(linear_index(order[next_hint], K))])
          ++next_hint;
        timings[id] = {g, wid, seconds(), 0.0, 0.0};
        char buf[128];
        std::snprintf(buf, sizeof buf, "%.3f start node %s worker %d", timings[id].start, to_string(g).c_str(), wid);
        log_line(buf);
      }
      const auto id = static_cast<std::size_t>(linear_index(g, K));
      try {
        const auto fresh = nn::init_model(cfg.model, derive_seed(cfg.seed, {id, 0}));
        nn::ModelWeights init = fresh;
        if (const auto d = dependency(g))
          init = nn::copy_descending_path(model.nodes[static_cast<std::size_t>(linear_index(*d, K))], fresh);
        if (opts.hooks.on_init) {
          std::lock_guard lock(hook_mu);
          opts.hooks.on_init(g, init);
        }
        double loss = 0.0;
        auto w = detail::train_node(cfg, model.grid.tile(g), data, std::move(init), opts.hooks, hook_mu, loss);
        if (opts.hooks.on_final) {
          std::lock_guard lock(hook_mu);
          opts.hooks.on_final(g, w);
        }
        std::lock_guard lock(mu);
        model.nodes[id] = std::move(w);
        timings[id].finish = seconds();
        timings[id].final_loss = loss;
        done[id] = true;
        ++finished;
        char buf[160];
        std::snprintf(buf, sizeof buf, "%.3f finish node %s worker %d seconds %.3f loss %.6f", timings[id].finish,
                      to_string(g).c_str(), wid, timings[id].finish - timings[id].start, loss);
        log_line(buf);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) {
          error = std::current_exception();
          error_node = to_string(g);
        }
      }
      cv.notify_all();
    }
  };

  const int P = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(opts.workers), n));
  if (P == 1) {
    worker(0);
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < P; ++w)
      threads.emplace_back(worker, w);
    for (auto &t : threads)
      t.join();
  }
  if (error) {
    try {
      std::rethrow_exception(error);
    } catch (const Error &e) {
      fail(Errc::pipeline, "training node " + error_node + " failed: " + std::string(to_string(e.code())) + ": " +
                               e.message());
    } catch (const std::exception &e) {
      fail(Errc::pipeline, "training node " + error_node + " failed: " + e.what());
    }
  }
  if (report) {
    report->timings = timings;
    report->workers = P;
    report->makespan = 0.0;
    for (const auto &t : timings)
      report->makespan = std::max(report->makespan, t.finish);
  }
  return model;
}

// Inference ------------------------------------------------------------------

/// Runs `fn(index)` for index in [0, n) on up to `workers` threads.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)> &fn) {
  const auto P = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n);
  if (P <= 1) {
    for (std::size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr error;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < P; ++w)
    threads.emplace_back([&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard lock(mu);
          if (error || next == n)
            return;
          i = next++;
        }
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error)
            error = std::current_exception();
        }
      }
    });
  for (auto &t : threads)
    t.join();
  if (error)
    std::rethrow_exception(error);
}

struct Segmentation {
  LabelMap labels;
  ProbVolume probs; ///< mean tile probability per voxel
};

/// Per-tile MC-dropout prediction fused by majority vote, at assembly dims.
inline Segmentation segment_assembly(const AssemblyModel &m, const std::vector<Volume> &channels, int workers = 1) {
  m.validate();
  require(static_cast<int>(channels.size()) == m.config.model.in_channels, Errc::pipeline,
          "assembly expects " + std::to_string(m.config.model.in_channels) + " channels, got " +
              std::to_string(channels.size()));
  for (const auto &c : channels)
    require(c.dims == m.grid.dims, Errc::pipeline,
            "channel dims " + to_string(c.dims) + " != assembly dims " + to_string(m.grid.dims));
  std::vector<ProbVolume> tile_probs(m.grid.tiles.size());
  parallel_for(m.grid.tiles.size(), workers, [&](std::size_t n) {
    const nn::FlushDenormals ftz;
    const auto &t = m.grid.tiles[n];
    const auto x = extract_tile(channels, t);
    tile_probs[n] = nn::mc_dropout_predict(m.nodes[n], x, m.config.mc_passes, derive_seed(m.config.seed, {n, 2}));
  });
  auto fused = fuse_tiles(m.grid.dims, m.config.model.num_classes, m.grid.tiles, tile_probs, true);
  fused.labels.copy_geometry(channels.front());
  return {std::move(fused.labels), std::move(*fused.mean_probs)};
}

/// Coarse segmentation brought back to subject dims by nearest neighbour.
inline LabelMap coarse_segmentation(const AssemblyModel &coarse, const Subject &s, int workers = 1) {
  require(coarse.config.scale == Scale::coarse, Errc::pipeline, "expected a coarse assembly");
  auto seg = segment_assembly(coarse, prepare_channels(s, coarse.config), workers);
  auto up = upsample_labels_nn(seg.labels, s.intensity.dims);
  up.copy_geometry(s.intensity);
  return up;
}

inline CoarseProvider coarse_provider(const AssemblyModel &coarse, int workers = 1) {
  return [&coarse, workers](const Subject &s) { return coarse_segmentation(coarse, s, workers); };
}

struct CascadeResult {
  LabelMap coarse;          ///< at coarse assembly dims
  LabelMap coarse_upsampled; ///< at subject dims
  LabelMap fine;            ///< at subject dims
};

inline CascadeResult run_cascade(const AssemblyModel &coarse, const AssemblyModel &fine, const Subject &s,
                                 int workers = 1) {
  require(coarse.config.scale == Scale::coarse && fine.config.scale == Scale::fine, Errc::pipeline,
          "cascade needs a coarse and a fine assembly");
  require(coarse.config.model.num_classes == fine.config.model.num_classes, Errc::pipeline,
          "coarse and fine assemblies disagree on the class count");
  require(fine.grid.dims == s.intensity.dims, Errc::pipeline,
          "fine assembly dims " + to_string(fine.grid.dims) + " != subject dims " + to_string(s.intensity.dims));
  require(coarse.grid.dims == coarse.config.assembly_dims(s.intensity.dims), Errc::pipeline,
          "coarse assembly dims " + to_string(coarse.grid.dims) + " do not match subject dims " +
              to_string(s.intensity.dims));
  CascadeResult r;
  r.coarse = segment_assembly(coarse, prepare_channels(s, coarse.config), workers).labels;
  r.coarse_upsampled = upsample_labels_nn(r.coarse, s.intensity.dims);
  r.coarse_upsampled.copy_geometry(s.intensity);
  r.fine = segment_assembly(fine, prepare_channels(s, fine.config, r.coarse_upsampled), workers).labels;
  r.fine.copy_geometry(s.intensity);
  return r;
}

// Assembly directory ---------------------------------------------------------

inline nlohmann::json to_json(const AssemblyConfig &c) {
  return {{"scale", to_string(c.scale)},
          {"downsample_factor", c.downsample_factor},
          {"K", c.K},
          {"tile_size", {c.tile_size.x, c.tile_size.y, c.tile_size.z}},
          {"model", nn::to_json(c.model)},
          {"epochs", c.epochs},
          {"swa_epochs", c.swa_epochs},
          {"mixup", c.mixup},
          {"mixup_alpha", c.mixup_alpha},
          {"flip", c.flip},
          {"transfer", c.transfer},
          {"use_prior", c.use_prior},
          {"mc_passes", c.mc_passes},
          {"seed", c.seed}};
}

inline AssemblyConfig assembly_config_from_json(const nlohmann::json &j) {
  AssemblyConfig c;
  c.scale = parse_scale(j.at("scale").get<std::string>());
  c.downsample_factor = j.at("downsample_factor").get<int>();
  c.K = j.at("K").get<int>();
  const auto t = j.at("tile_size").get<std::vector<int>>();
  require(t.size() == 3, Errc::format, "tile_size must have 3 entries");
  c.tile_size = {t[0], t[1], t[2]};
  c.model = nn::hyperparams_from_json(j.at("model"));
  c.epochs = j.at("epochs").get<int>();
  c.swa_epochs = j.at("swa_epochs").get<int>();
  c.mixup = j.at("mixup").get<bool>();
  c.mixup_alpha = j.at("mixup_alpha").get<double>();
  c.flip = j.at("flip").get<bool>();
  c.transfer = j.at("transfer").get<bool>();
  c.use_prior = j.at("use_prior").get<bool>();
  c.mc_passes = j.at("mc_passes").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline std::string node_filename(GridIndex g) {
  return "node_" + std::to_string(g.i) + "_" + std::to_string(g.j) + "_" + std::to_string(g.k) + ".asmw";
}

/// Writes `config`, `grid.txt` and one weight file per node into `dir`.
inline void save_assembly(const AssemblyModel &m, const std::filesystem::path &dir) {
  m.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, Errc::io, "cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json j = to_json(m.config);
  j["dims"] = {m.grid.dims.x, m.grid.dims.y, m.grid.dims.z};
  {
    std::ofstream out(dir / "config", std::ios::trunc);
    out << j.dump(2) << '\n';
    require(static_cast<bool>(out), Errc::io, "cannot write " + (dir / "config").string());
  }
  {
    std::ofstream out(dir / "grid.txt", std::ios::trunc);
    write_grid(out, m.grid);
    require(static_cast<bool>(out), Errc::io, "cannot write " + (dir / "grid.txt").string());
  }
  for (const auto &t : m.grid.tiles)
    nn::save_weights(m.node(t.index), dir / node_filename(t.index));
}

inline AssemblyModel load_assembly(const std::filesystem::path &dir) {
  std::ifstream in(dir / "config");
  require(static_cast<bool>(in), Errc::io, "cannot open " + (dir / "config").string());
  AssemblyModel m;
  Dims dims;
  try {
    const auto j = nlohmann::json::parse(in);
    m.config = assembly_config_from_json(j);
    const auto d = j.at("dims").get<std::vector<int>>();
    require(d.size() == 3, Errc::format, "dims must have 3 entries");
    dims = {d[0], d[1], d[2]};
  } catch (const nlohmann::json::exception &e) {
    fail(Errc::format, (dir / "config").string() + ": " + e.what());
  }
  m.grid = build_grid(dims, m.config.tile_size, m.config.K);
  for (const auto &t : m.grid.tiles)
    m.nodes.push_back(nn::load_weights(dir / node_filename(t.index)));
  m.validate();
  return m;
}

} // namespace asmnet
