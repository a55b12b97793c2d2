// End-to-end acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
// Usage: acceptance [config] [--quick]   (--quick skips criteria 7 and 8)

#include "asmnet.hpp"
#include "asmnet/run_config.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace asmnet;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string &what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string &s) { detail += (detail.empty() ? "" : "; ") + s; }
};

int failures = 0;

void report(int n, const Outcome &o, double seconds, double limit) {
  const bool ok = o.pass && (limit <= 0.0 || seconds < limit);
  failures += ok ? 0 : 1;
  std::printf("criterion %d: %s (%.2f s%s) %s\n", n, ok ? "PASS" : "FAIL", seconds,
              limit > 0.0 && seconds >= limit ? ", over time limit" : "", o.detail.c_str());
  std::fflush(stdout);
}

void run_criterion(int n, double limit, const std::function<void(Outcome &)> &body) {
  Outcome o;
  const auto t0 = Clock::now();
  try {
    body(o);
  } catch (const std::exception &e) {
    o.check(false, std::string("exception: ") + e.what());
  }
  report(n, o, since(t0), limit);
}

std::string fmt(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

std::vector<char> bytes_of(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// 1 --------------------------------------------------------------------------

void tiling(Outcome &o) {
  const auto fine = build_grid({181, 217, 181}, {64, 72, 64}, 5);
  const std::vector<int> x{0, 29, 59, 88, 117}, y{0, 36, 73, 109, 145};
  o.check(tile_origins(181, 64, 5) == x, "x origins");
  o.check(tile_origins(217, 72, 5) == y, "y origins");
  o.check(fine.tiles.size() == 125, "125 tiles");
  o.check(fine.min_overlap == std::array<int, 3>{34, 35, 34}, "fine min overlaps (34,35,34)");
  const auto cov = coverage_map(fine);
  o.check(*std::min_element(cov.data.begin(), cov.data.end()) >= 1, "full coverage");
  for (const auto &t : fine.tiles)
    o.check(t.origin[0] == x[std::size_t(t.index.i)] && t.origin[1] == y[std::size_t(t.index.j)] &&
                t.origin[2] == x[std::size_t(t.index.k)],
            "tile origin " + to_string(t.index));
  const auto coarse = build_grid({91, 109, 91}, {32, 48, 32}, 5);
  for (int a = 0; a < 3; ++a)
    o.check(coarse.min_overlap[std::size_t(a)] * 2 >= coarse.tile_size[a], "coarse overlap >= w/2");
  o.note("fine min overlaps " + std::to_string(fine.min_overlap[0]) + "," + std::to_string(fine.min_overlap[1]) +
         "," + std::to_string(fine.min_overlap[2]));
}

// 2 --------------------------------------------------------------------------

void fusion_oracle(Outcome &o) {
  std::mt19937_64 rng(77);
  int agree = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Dims d{1 + int(rng() % 16), 1 + int(rng() % 16), 1 + int(rng() % 16)};
    const int C = 2 + int(rng() % 3), n = 1 + int(rng() % 8);
    std::vector<TileSpec> tiles{{{0, 0, 0}, {0, 0, 0}, d}};
    for (int t = 1; t < n; ++t) {
      TileSpec s;
      s.index = {t, 0, 0};
      for (int a = 0; a < 3; ++a) {
        s.size[a] = 1 + int(rng() % unsigned(d[a]));
        s.origin[std::size_t(a)] = int(rng() % unsigned(d[a] - s.size[a] + 1));
      }
      tiles.push_back(s);
    }
    std::vector<ProbVolume> probs;
    for (const auto &t : tiles) {
      ProbVolume p(t.size, C);
      for (std::size_t v = 0; v < t.size.count(); ++v) {
        std::vector<int> w(static_cast<std::size_t>(C));
        int total = 0;
        for (auto &x : w)
          total += x = int(rng() % 4);
        if (total == 0)
          total = w[0] = 1;
        for (int c = 0; c < C; ++c)
          p.voxel(v)[std::size_t(c)] = float(w[std::size_t(c)]) / float(total);
      }
      probs.push_back(std::move(p));
    }
    const auto fused = fuse_tiles(d, C, tiles, probs);
    bool same = true;
    for (int z = 0; z < d.z && same; ++z)
      for (int yy = 0; yy < d.y && same; ++yy)
        for (int xx = 0; xx < d.x && same; ++xx) {
          std::vector<int> votes(std::size_t(C), 0);
          std::vector<double> sums(std::size_t(C), 0.0);
          for (std::size_t t = 0; t < tiles.size(); ++t) {
            const auto &s = tiles[t];
            if (!s.contains(xx, yy, z))
              continue;
            const auto lx = xx - s.origin[0], ly = yy - s.origin[1], lz = z - s.origin[2];
            const auto p = probs[t].voxel(std::size_t(lx + s.size.x * (ly + s.size.y * lz)));
            ++votes[std::size_t(std::max_element(p.begin(), p.end()) - p.begin())];
            for (int c = 0; c < C; ++c)
              sums[std::size_t(c)] += p[std::size_t(c)];
          }
          int best = 0;
          for (int c = 1; c < C; ++c)
            if (votes[std::size_t(c)] > votes[std::size_t(best)] ||
                (votes[std::size_t(c)] == votes[std::size_t(best)] && sums[std::size_t(c)] > sums[std::size_t(best)]))
              best = c;
          same = fused.labels.at(xx, yy, z) == best;
        }
    agree += same;
  }
  o.check(agree == 100, std::to_string(100 - agree) + " instances disagree");
  o.note(std::to_string(agree) + "/100 instances match the recount");
}

// 3 --------------------------------------------------------------------------

void gradient_check(Outcome &o) {
  nn::ModelHyperparams h;
  h.in_channels = 1;
  h.num_classes = 3;
  h.base_filters = 2;
  h.depth = 1;
  h.dropout = 0.0;
  const auto w = nn::cast_weights<double>(nn::init_model(h, 2024));
  std::mt19937_64 rng(99);
  std::normal_distribution<float> normal;
  TileArray x{1, {8, 8, 8}, std::vector<float>(512)};
  for (auto &v : x.data)
    v = normal(rng);
  LabelMap l({8, 8, 8}, 3);
  for (auto &v : l.data)
    v = std::uint16_t(rng() % 3);
  const auto target = nn::one_hot(l);
  auto loss = [&](const nn::BasicWeights<double> &ww) {
    return nn::dice_loss<double, float>(nn::forward<double>(ww, x, nn::Mode::deterministic).probs, target, 3).loss;
  };
  const auto fwd = nn::forward<double>(w, x, nn::Mode::deterministic);
  const auto grads = nn::backward<double>(w, fwd.cache, nn::dice_loss<double, float>(fwd.probs, target, 3).grad);
  const double step = 1e-6;
  double worst = 0.0;
  for (int s = 0; s < 60; ++s) {
    const std::size_t a = rng() % w.arrays.size(), i = rng() % w.arrays[a].values.size();
    auto plus = w, minus = w;
    plus.arrays[a].values[i] += step;
    minus.arrays[a].values[i] -= step;
    const double fd = (loss(plus) - loss(minus)) / (2 * step), an = grads.arrays[a].values[i];
    worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-12}));
  }
  o.check(worst < 1e-4, "max relative error " + std::to_string(worst));
  o.note("60 weights, max relative error " + fmt(worst * 1e6, 3) + "e-6");
}

// 4 --------------------------------------------------------------------------

void dice_loss_values(Outcome &o) {
  LabelMap l({6, 6, 6}, 4);
  std::mt19937_64 rng(1);
  for (auto &v : l.data)
    v = std::uint16_t(rng() % 4);
  const auto onehot = nn::one_hot(l);
  const double perfect = nn::dice_loss<float, float>(onehot, onehot, 4).loss;
  o.check(perfect <= 1e-4, "perfect prediction loss " + std::to_string(perfect));
  const std::size_t N = 64;
  std::vector<float> uniform(2 * N, 0.5f), target(2 * N, 0.0f);
  for (std::size_t v = 0; v < N; ++v)
    target[(v % 2) * N + v] = 1.0f;
  const double half = nn::dice_loss<float, float>(uniform, target, 2).loss;
  o.check(std::abs(half - 0.5) <= 1e-3, "uniform prediction loss " + std::to_string(half));
  o.note("perfect " + fmt(perfect, 6) + ", uniform " + fmt(half, 6));
}

// 5 --------------------------------------------------------------------------

void transfer_dag(Outcome &o) {
  for (int K = 2; K <= 6; ++K)
    for (int n = 0; n < K * K * K; ++n) {
      const auto g = grid_index(n, K);
      std::optional<GridIndex> expected;
      if (g.k > 0)
        expected = GridIndex{g.i, g.j, g.k - 1};
      else if (g.i > 0)
        expected = GridIndex{g.i - 1, g.j, 0};
      else if (g.j > 0)
        expected = GridIndex{0, g.j - 1, 0};
      o.check(predecessor(g, K) == expected, "predecessor of " + to_string(g) + " K=" + std::to_string(K));
    }
  // Longest chain by walking predecessors from every node.
  int longest = 0;
  for (int n = 0; n < 125; ++n) {
    int len = 1;
    for (auto g = predecessor(grid_index(n, 5), 5); g; g = predecessor(*g, 5))
      ++len;
    longest = std::max(longest, len);
  }
  o.check(critical_path_length(5) == longest && longest == 13, "critical path " + std::to_string(longest));
  const double m1 = simulate_schedule_unit(5, 1).makespan, minf = simulate_schedule_unit(5, 125).makespan;
  o.check(m1 == 125.0, "makespan P=1 " + fmt(m1, 1));
  o.check(minf == 13.0, "makespan P=inf " + fmt(minf, 1));
  o.note("critical path " + std::to_string(longest) + ", makespan " + fmt(m1, 0) + " / " + fmt(minf, 0));
}

// 6 --------------------------------------------------------------------------

void swa_and_mc(Outcome &o) {
  const auto base = nn::init_model(nn::ModelHyperparams{}, 3);
  std::mt19937_64 rng(3);
  std::normal_distribution<float> normal;
  std::vector<nn::ModelWeights> snaps;
  std::optional<nn::SwaState> state;
  for (int s = 0; s < 21; ++s) {
    auto w = base;
    for (auto &a : w.arrays)
      for (auto &v : a.values)
        v = normal(rng);
    state = nn::swa_update(std::move(state), w);
    snaps.push_back(std::move(w));
  }
  const auto avg = state->weights();
  double worst = 0.0;
  for (std::size_t a = 0; a < base.arrays.size(); ++a)
    for (std::size_t i = 0; i < base.arrays[a].values.size(); ++i) {
      double direct = 0.0;
      for (const auto &s : snaps)
        direct += s.arrays[a].values[i];
      worst = std::max(worst, std::abs(direct / 21.0 - double(avg.arrays[a].values[i])));
    }
  o.check(worst < 1e-6, "SWA deviation " + std::to_string(worst));

  TileArray x{2, {12, 12, 12}, std::vector<float>(2 * 1728)};
  for (auto &v : x.data)
    v = normal(rng);
  const auto mc = nn::mc_dropout_predict(base, x, 5, 11);
  o.check(mc.max_simplex_error() <= 1e-5, "MC output off the simplex by " + std::to_string(mc.max_simplex_error()));
  auto h0 = base.hyper;
  h0.dropout = 0.0;
  auto w0 = base;
  w0.hyper = h0;
  const auto det = nn::to_prob_volume<float>(nn::forward<float>(w0, x, nn::Mode::deterministic).probs, x.dims, h0.num_classes).data;
  const auto mc0 = nn::mc_dropout_predict(w0, x, 4, 11);
  double diff = 0.0;
  for (std::size_t i = 0; i < det.size(); ++i)
    diff = std::max(diff, double(std::abs(mc0.data[i] - det[i])));
  o.check(diff <= 1e-6, "p=0 MC differs from deterministic by " + std::to_string(diff));
  o.note("SWA max deviation " + fmt(worst * 1e9, 2) + "e-9, simplex error " + fmt(mc.max_simplex_error() * 1e7, 2) +
         "e-7");
}

// 9 --------------------------------------------------------------------------

void round_trips(Outcome &o) {
  const auto dir = fs::temp_directory_path() / ("asmnet-acceptance-io-" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  PhantomSpec spec;
  spec.dims = {26, 24, 28};
  const auto s = generate_phantom(spec, 1);
  nifti::write_nifti(s.intensity, dir / "i.nii");
  nifti::write_nifti(*s.ground_truth, dir / "l.nii");
  o.check(nifti::read_volume(dir / "i.nii").data == s.intensity.data, "NIfTI intensity round trip");
  o.check(nifti::read_labels(dir / "l.nii", 6).data == s.ground_truth->data, "NIfTI label round trip");
  nifti::write_nifti(nifti::read_volume(dir / "i.nii"), dir / "i2.nii");
  o.check(bytes_of(dir / "i.nii") == bytes_of(dir / "i2.nii"), "NIfTI rewrite is byte-identical");

  const auto w = nn::init_model(nn::ModelHyperparams{}, 5);
  nn::save_weights(w, dir / "w.asmw");
  o.check(nn::load_weights(dir / "w.asmw") == w, "weight round trip");
  auto bytes = bytes_of(dir / "w.asmw");
  o.check(std::string(bytes.begin(), bytes.begin() + 8) == "ASMW0001", "weight magic");

  auto rejects = [&](const fs::path &good, std::size_t offset, const std::function<void(const fs::path &)> &load) {
    auto b = bytes_of(good);
    b[offset] ^= 0x5a;
    const auto bad = dir / "bad.bin";
    std::ofstream(bad, std::ios::binary).write(b.data(), std::streamsize(b.size()));
    try {
      load(bad);
    } catch (const Error &e) {
      return e.code() == Errc::format;
    }
    return false;
  };
  o.check(rejects(dir / "w.asmw", 2, [](const fs::path &p) { nn::load_weights(p); }), "corrupt weight magic rejected");
  o.check(rejects(dir / "i.nii", 344, [](const fs::path &p) { nifti::read_volume(p); }), "corrupt NIfTI magic rejected");
  o.note("NIfTI and ASMW0001 round trips bit-exact, corrupted magic rejected");
  fs::remove_all(dir);
}

// 7 and 8 ----------------------------------------------------------------------

struct FullRun {
  std::vector<LabelMap> coarse, cascade;
  double seconds = 0.0;
  double coarse_dice = 0.0, cascade_dice = 0.0;
};

std::vector<fs::path> files_in(const fs::path &dir) {
  std::vector<fs::path> out;
  for (const auto &e : fs::directory_iterator(dir))
    out.push_back(e.path().filename());
  std::sort(out.begin(), out.end());
  return out;
}

double mean_over(const std::vector<LabelMap> &pred, const std::vector<Subject> &test, int C) {
  double sum = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i)
    sum += mean_dice(pred[i], *test[i].ground_truth, C);
  return sum / double(test.size());
}

FullRun full_run(const RunConfig &cfg, const std::vector<Subject> &train, const std::vector<Subject> &test,
                 int workers, const fs::path &out) {
  FullRun r;
  const auto t0 = Clock::now();
  TrainOptions opts;
  opts.workers = workers;
  const auto coarse = train_assembly(train, cfg.coarse, {}, opts);
  const auto fine = train_assembly(train, cfg.fine, coarse_provider(coarse, workers), opts);
  for (const auto &s : test) {
    auto c = run_cascade(coarse, fine, s, workers);
    r.coarse.push_back(std::move(c.coarse_upsampled));
    r.cascade.push_back(std::move(c.fine));
  }
  r.seconds = since(t0);
  save_assembly(coarse, out / "assembly-coarse");
  save_assembly(fine, out / "assembly-fine");
  for (std::size_t i = 0; i < test.size(); ++i)
    nifti::write_nifti(r.cascade[i], out / (test[i].id + "_cascade.nii"));
  const int C = cfg.phantom.num_classes;
  r.coarse_dice = mean_over(r.coarse, test, C);
  r.cascade_dice = mean_over(r.cascade, test, C);
  return r;
}

void end_to_end(const RunConfig &cfg) {
  const auto root = fs::temp_directory_path() / ("asmnet-acceptance-" + std::to_string(std::random_device{}()));
  struct Cleanup {
    fs::path p;
    ~Cleanup() {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
  } cleanup{root};

  const auto t0 = Clock::now();
  Outcome o7, o8;
  try {
    const auto manifest = generate_dataset(cfg.n_train, cfg.n_test, cfg.phantom, root / "data");
    const auto train = load_split(manifest, "train"), test = load_split(manifest, "test");
    const int C = cfg.phantom.num_classes;
    double prior_dice = 0.0;
    for (const auto &s : test)
      prior_dice += mean_dice(s.prior, *s.ground_truth, C);
    prior_dice /= double(test.size());

    std::printf("  serial run (P=1) ...\n");
    std::fflush(stdout);
    const auto serial = full_run(cfg, train, test, 1, root / "serial");
    std::printf("  serial run: %.1f s, coarse %.4f, cascade %.4f\n", serial.seconds, serial.coarse_dice,
                serial.cascade_dice);
    std::printf("  coarse run without prior ...\n");
    std::fflush(stdout);
    auto no_prior_cfg = cfg.coarse;
    no_prior_cfg.use_prior = false;
    const auto tp = Clock::now();
    const auto no_prior = train_assembly(train, no_prior_cfg);
    std::vector<LabelMap> np_seg;
    for (const auto &s : test)
      np_seg.push_back(coarse_segmentation(no_prior, s));
    const double np_dice = mean_over(np_seg, test, C);
    std::printf("  no-prior coarse: %.1f s, %.4f\n", since(tp), np_dice);
    std::printf("  parallel run (P=4) ...\n");
    std::fflush(stdout);
    const auto parallel = full_run(cfg, train, test, 4, root / "parallel");
    std::printf("  parallel run: %.1f s\n", parallel.seconds);

    o7.check(serial.cascade_dice >= serial.coarse_dice - 0.005, "(a) cascade below coarse-only");
    o7.check(serial.coarse_dice >= np_dice - 0.01, "(b) prior below no-prior");
    o7.check(serial.cascade_dice >= 0.70, "(c) held-out mean Dice below 0.70");
    o7.check(serial.seconds <= 1800.0, "single-threaded run over 30 min");
    o7.note("cascade " + fmt(serial.cascade_dice) + " vs coarse " + fmt(serial.coarse_dice) + ", prior " +
            fmt(serial.coarse_dice) + " vs no-prior " + fmt(np_dice) + ", atlas alone " + fmt(prior_dice) +
            ", P=1 " + fmt(serial.seconds, 0) + " s");
    const unsigned cores = std::thread::hardware_concurrency();
    if (cores >= 4)
      o7.check(parallel.seconds <= 600.0, "4-worker run over 10 min");
    else
      o7.note("P=4 " + fmt(parallel.seconds, 0) + " s on " + std::to_string(cores) +
              " core(s), 10 min target not measurable");

    std::size_t compared = 0;
    for (const char *sub : {"assembly-coarse", "assembly-fine"}) {
      const auto a = files_in(root / "serial" / sub), b = files_in(root / "parallel" / sub);
      o8.check(a == b, std::string(sub) + " file lists differ");
      for (const auto &f : a) {
        o8.check(bytes_of(root / "serial" / sub / f) == bytes_of(root / "parallel" / sub / f),
                 std::string(sub) + "/" + f.string() + " differs");
        ++compared;
      }
    }
    for (std::size_t i = 0; i < test.size(); ++i) {
      const auto name = test[i].id + "_cascade.nii";
      o8.check(bytes_of(root / "serial" / name) == bytes_of(root / "parallel" / name), name + " differs");
      o8.check(serial.coarse[i].data == parallel.coarse[i].data, test[i].id + " coarse segmentation differs");
    }
    o8.note(std::to_string(compared) + " assembly files and " + std::to_string(test.size()) +
            " segmentations bit-identical across P=1 and P=4 runs");
  } catch (const std::exception &e) {
    o7.check(false, std::string("exception: ") + e.what());
    o8.check(false, "end-to-end run did not complete");
  }
  const double t = since(t0);
  report(7, o7, t, 0.0);
  report(8, o8, t, 0.0);
}

} // namespace

int main(int argc, char **argv) {
  fs::path config_path;
  bool quick = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--quick")
      quick = true;
    else
      config_path = a;
  }

  run_criterion(1, 1.0, tiling);
  run_criterion(2, 10.0, fusion_oracle);
  run_criterion(3, 60.0, gradient_check);
  run_criterion(4, 1.0, dice_loss_values);
  run_criterion(5, 5.0, transfer_dag);
  run_criterion(6, 10.0, swa_and_mc);
  if (quick) {
    std::printf("criterion 7: SKIPPED (--quick)\ncriterion 8: SKIPPED (--quick)\n");
  } else {
    RunConfig cfg;
    cfg.propagate_seed();
    if (!config_path.empty())
      cfg = load_config(config_path);
    std::printf("  end-to-end with %s\n", config_path.empty() ? "defaults" : config_path.string().c_str());
    end_to_end(cfg);
  }
  run_criterion(9, 0.0, round_trips);
  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
