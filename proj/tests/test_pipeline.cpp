#include "asmnet/pipeline.hpp"
#include "asmnet/synth.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <map>
#include <sstream>

using namespace asmnet;

namespace {

std::vector<Subject> tiny_dataset(int n, int C = 4) {
  PhantomSpec spec;
  spec.dims = {24, 24, 24};
  spec.num_classes = C;
  std::vector<Subject> out;
  for (int i = 0; i < n; ++i)
    out.push_back(generate_phantom(spec, static_cast<std::uint64_t>(i)));
  return out;
}

AssemblyConfig tiny_coarse(int C = 4) {
  auto c = AssemblyConfig::coarse_defaults();
  c.K = 2;
  c.tile_size = {8, 8, 8};
  c.model.num_classes = C;
  c.epochs = 2;
  c.swa_epochs = 1;
  c.mc_passes = 2;
  c.seed = 11;
  return c;
}

AssemblyConfig tiny_fine(int C = 4) {
  auto c = AssemblyConfig::fine_defaults();
  c.K = 2;
  c.tile_size = {16, 16, 16};
  c.model.num_classes = C;
  c.epochs = 1;
  c.swa_epochs = 1;
  c.mc_passes = 2;
  c.seed = 12;
  return c;
}

bool descending_equal(const nn::ModelWeights &a, const nn::ModelWeights &b) {
  for (std::size_t i = 0; i < a.arrays.size(); ++i)
    if (a.arrays[i].descending && a.arrays[i].values != b.arrays[i].values)
      return false;
  return true;
}

} // namespace

TEST(Channels, CoarseAndFineLayout) {
  const auto s = tiny_dataset(1).front();
  const auto coarse = prepare_channels(s, tiny_coarse());
  ASSERT_EQ(coarse.size(), 2u);
  EXPECT_EQ(coarse[0].dims, (Dims{12, 12, 12}));
  // Prior channel encodes label l as l / (C - 1).
  const auto prior = downsample(s.prior, 2);
  for (std::size_t v = 0; v < prior.data.size(); ++v)
    ASSERT_FLOAT_EQ(coarse[1].data[v], float(prior.data[v]) / 3.0f);

  auto no_prior = tiny_coarse();
  no_prior.use_prior = false;
  for (float x : prepare_channels(s, no_prior)[1].data)
    ASSERT_EQ(x, 0.0f);

  const auto fine = prepare_channels(s, tiny_fine(), *s.ground_truth);
  ASSERT_EQ(fine.size(), 3u);
  EXPECT_EQ(fine[2].dims, (Dims{24, 24, 24}));
  EXPECT_FLOAT_EQ(fine[2].data[0], float(s.ground_truth->data[0]) / 3.0f);

  expect_errc([&] { prepare_channels(s, tiny_fine()); }, Errc::pipeline);
  expect_errc([&] { prepare_channels(s, tiny_coarse(), *s.ground_truth); }, Errc::pipeline);
}

TEST(Flip, InvolutionAndLeftRightExchange) {
  const auto s = tiny_dataset(1).front();
  const auto f = flip_subject(s);
  EXPECT_EQ(f.id, s.id + "_flip");
  const auto &g = *s.ground_truth, &fg = *f.ground_truth;
  for (int z = 0; z < 24; ++z)
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 24; ++x) {
        const auto l = g.at(x, y, z);
        const auto expected = l == 1 ? 2 : l == 2 ? 1 : l;
        ASSERT_EQ(fg.at(23 - x, y, z), expected);
        ASSERT_EQ(f.intensity.at(23 - x, y, z), s.intensity.at(x, y, z));
      }
  const auto back = flip_subject(f);
  EXPECT_EQ(back.id, s.id);
  EXPECT_EQ(back.intensity.data, s.intensity.data);
  EXPECT_EQ(back.ground_truth->data, s.ground_truth->data);
  EXPECT_EQ(back.prior.data, s.prior.data);

  auto no_table = s;
  no_table.swap_table.clear();
  expect_errc([&] { flip_subject(no_table); }, Errc::configuration);
}

TEST(MixUp, ConvexCombination) {
  Sample a, b;
  a.x = TileArray(1, {2, 1, 1});
  b.x = TileArray(1, {2, 1, 1});
  a.x.data = {1.0f, 3.0f};
  b.x.data = {3.0f, 5.0f};
  a.y = {1.0f, 0.0f, 0.0f, 1.0f};
  b.y = {0.0f, 1.0f, 1.0f, 0.0f};
  EXPECT_EQ(mixup(a, b, 1.0).x.data, a.x.data);
  EXPECT_EQ(mixup(a, b, 0.0).y, b.y);
  const auto m = mixup(a, b, 0.5);
  EXPECT_EQ(m.x.data, (std::vector<float>{2.0f, 4.0f}));
  EXPECT_EQ(m.y, (std::vector<float>{0.5f, 0.5f, 0.5f, 0.5f}));
  // Soft targets still sum to one per voxel.
  const auto q = mixup(a, b, 0.3);
  EXPECT_NEAR(q.y[0] + q.y[2], 1.0f, 1e-6f);
  EXPECT_NEAR(q.y[1] + q.y[3], 1.0f, 1e-6f);
  expect_errc([&] { mixup(a, b, 1.5); }, Errc::parameter);
}

TEST(MixUp, BetaSamplesMatchMoments) {
  std::mt19937_64 rng(4);
  const double alpha = 0.2;
  double sum = 0.0, sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x = sample_beta(alpha, rng);
    ASSERT_GE(x, 0.0);
    ASSERT_LE(x, 1.0);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  EXPECT_NEAR(mean, 0.5, 0.01);
  // Var of Beta(a, a) is 1 / (4 (2a + 1)).
  EXPECT_NEAR(var, 1.0 / (4.0 * (2.0 * alpha + 1.0)), 0.01);
}

TEST(Training, TransferCopiesPredecessorDescendingPath) {
  const auto data = tiny_dataset(2);
  std::map<int, nn::ModelWeights> init, final;
  TrainOptions opts;
  opts.hooks.on_init = [&](GridIndex g, const nn::ModelWeights &w) { init[linear_index(g, 2)] = w; };
  opts.hooks.on_final = [&](GridIndex g, const nn::ModelWeights &w) { final[linear_index(g, 2)] = w; };
  const auto m = train_assembly(data, tiny_coarse(), {}, opts);
  ASSERT_EQ(init.size(), 8u);
  for (int v = 0; v < 8; ++v) {
    const auto g = grid_index(v, 2);
    const auto fresh = nn::init_model(m.config.model, derive_seed(m.config.seed, {std::uint64_t(v), 0}));
    if (const auto p = predecessor(g, 2)) {
      EXPECT_TRUE(descending_equal(init[v], final[linear_index(*p, 2)])) << to_string(g);
      EXPECT_FALSE(descending_equal(init[v], fresh)) << to_string(g);
      // The ascending path starts fresh.
      for (std::size_t i = 0; i < fresh.arrays.size(); ++i)
        if (!fresh.arrays[i].descending)
          ASSERT_EQ(init[v].arrays[i].values, fresh.arrays[i].values);
    } else {
      EXPECT_EQ(init[v], fresh);
    }
    EXPECT_EQ(m.node(g), final[v]);
    EXPECT_TRUE(m.node(g).all_finite());
  }
  // (1,0,0) inherits from (0,0,0).
  EXPECT_TRUE(descending_equal(init[linear_index({1, 0, 0}, 2)], final[0]));
}

TEST(Training, WithoutTransferEveryNodeStartsFresh) {
  auto cfg = tiny_coarse();
  cfg.transfer = false;
  cfg.epochs = 1;
  cfg.swa_epochs = 0;
  TrainOptions opts;
  int checked = 0;
  opts.hooks.on_init = [&](GridIndex g, const nn::ModelWeights &w) {
    EXPECT_EQ(w, nn::init_model(cfg.model, derive_seed(cfg.seed, {std::uint64_t(linear_index(g, 2)), 0})));
    ++checked;
  };
  train_assembly(tiny_dataset(1), cfg, {}, opts);
  EXPECT_EQ(checked, 8);
}

TEST(Training, WorkerCountAndOrderDoNotChangeWeights) {
  const auto data = tiny_dataset(2);
  const auto cfg = tiny_coarse();
  TrainReport r1, r4;
  const auto a = train_assembly(data, cfg, {}, {}, &r1);
  TrainOptions four;
  four.workers = 4;
  const auto b = train_assembly(data, cfg, {}, four, &r4);
  EXPECT_EQ(a.nodes, b.nodes);
  EXPECT_EQ(r4.workers, 4);

  // A different valid order: depth-first along each column's planes.
  std::vector<GridIndex> order;
  for (int j = 0; j < 2; ++j)
    order.push_back({0, j, 0});
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 2; ++i) {
      if (i > 0)
        order.push_back({i, j, 0});
      order.push_back({i, j, 1});
    }
  ASSERT_TRUE(is_valid_order(order, 2));
  ASSERT_NE(order, topological_order(2));
  TrainOptions alt;
  alt.order = order;
  EXPECT_EQ(train_assembly(data, cfg, {}, alt).nodes, a.nodes);

  // Every dependency finished before its dependant started.
  for (const auto &t : r4.timings)
    if (const auto p = predecessor(t.node, 2))
      EXPECT_LE(r4.timings[std::size_t(linear_index(*p, 2))].finish, t.start);

  TrainOptions bad;
  bad.order = topological_order(2);
  std::swap((*bad.order)[0], (*bad.order)[1]);
  expect_errc([&] { train_assembly(data, cfg, {}, bad); }, Errc::configuration);
}

TEST(Training, EpochHookCountsAndSingleNodeAssembly) {
  auto cfg = tiny_coarse();
  cfg.K = 1;
  cfg.tile_size = {12, 12, 12};
  std::vector<int> epochs;
  TrainOptions opts;
  opts.hooks.on_epoch = [&](GridIndex g, int e, double loss) {
    EXPECT_EQ(g, (GridIndex{0, 0, 0}));
    EXPECT_TRUE(std::isfinite(loss));
    epochs.push_back(e);
  };
  std::ostringstream log;
  opts.log = &log;
  const auto data = tiny_dataset(1);
  const auto m = train_assembly(data, cfg, {}, opts);
  EXPECT_EQ(epochs, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(m.nodes.size(), 1u);
  EXPECT_NE(log.str().find("start node (0,0,0)"), std::string::npos) << log.str();
  const auto seg = segment_assembly(m, prepare_channels(data[0], cfg));
  EXPECT_EQ(seg.labels.dims, (Dims{12, 12, 12}));
}

TEST(Training, ZeroEpochsKeepsInitialWeights) {
  auto cfg = tiny_coarse();
  cfg.epochs = 0;
  cfg.swa_epochs = 0;
  cfg.transfer = false;
  const auto m = train_assembly(tiny_dataset(1), cfg);
  for (int v = 0; v < 8; ++v)
    EXPECT_EQ(m.nodes[std::size_t(v)], nn::init_model(cfg.model, derive_seed(cfg.seed, {std::uint64_t(v), 0})));
}

TEST(Training, Errors) {
  const auto data = tiny_dataset(1);
  expect_errc([&] { train_assembly({}, tiny_coarse()); }, Errc::pipeline);
  expect_errc([&] { train_assembly(data, tiny_fine()); }, Errc::pipeline);
  auto unlabeled = data;
  unlabeled[0].ground_truth.reset();
  expect_errc([&] { train_assembly(unlabeled, tiny_coarse()); }, Errc::pipeline);
  auto wrong = tiny_coarse();
  wrong.tile_size = {6, 8, 8};
  expect_errc([&] { train_assembly(data, wrong); }, Errc::configuration);
  wrong = tiny_coarse(5);
  expect_errc([&] { train_assembly(data, wrong); }, Errc::configuration);
  wrong = tiny_coarse();
  wrong.model.in_channels = 3;
  expect_errc([&] { train_assembly(data, wrong); }, Errc::configuration);
}

TEST(Cascade, DimsAndPersistence) {
  const auto data = tiny_dataset(2);
  const auto coarse = train_assembly(data, tiny_coarse());
  const auto fine = train_assembly(data, tiny_fine(), coarse_provider(coarse));
  const auto r = run_cascade(coarse, fine, data[0]);
  EXPECT_EQ(r.coarse.dims, (Dims{12, 12, 12}));
  EXPECT_EQ(r.coarse_upsampled.dims, (Dims{24, 24, 24}));
  EXPECT_EQ(r.fine.dims, (Dims{24, 24, 24}));
  EXPECT_EQ(r.coarse_upsampled.data, coarse_segmentation(coarse, data[0]).data);
  for (auto l : r.fine.data)
    ASSERT_LT(l, 4);
  // Inference is deterministic and independent of the worker count.
  EXPECT_EQ(run_cascade(coarse, fine, data[0], 3).fine.data, r.fine.data);

  TempDir dir;
  save_assembly(coarse, dir / "coarse");
  save_assembly(fine, dir / "fine");
  EXPECT_TRUE(std::filesystem::exists(dir / "coarse" / "grid.txt"));
  const auto c2 = load_assembly(dir / "coarse"), f2 = load_assembly(dir / "fine");
  EXPECT_EQ(c2.config, coarse.config);
  EXPECT_EQ(c2.nodes, coarse.nodes);
  EXPECT_EQ(f2.nodes, fine.nodes);
  EXPECT_EQ(run_cascade(c2, f2, data[0]).fine.data, r.fine.data);

  expect_errc([&] { run_cascade(fine, coarse, data[0]); }, Errc::pipeline);
  expect_errc([&] { load_assembly(dir / "missing"); }, Errc::io);
  std::filesystem::remove(dir / "coarse" / node_filename({1, 1, 1}));
  EXPECT_THROW(load_assembly(dir / "coarse"), Error);
}
