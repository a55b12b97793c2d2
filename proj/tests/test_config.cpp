#include "asmnet/run_config.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace asmnet;

namespace {

RunConfig parse(const std::string &text) {
  std::istringstream in(text);
  return parse_config(in);
}

} // namespace

TEST(Config, DefaultsAreTheReferenceSettings) {
  const auto c = parse("");
  EXPECT_EQ(c.n_train, 20);
  EXPECT_EQ(c.n_test, 5);
  EXPECT_EQ(c.phantom.dims, (Dims{48, 48, 48}));
  EXPECT_EQ(c.coarse.K, 3);
  EXPECT_EQ(c.coarse.epochs, 30);
  EXPECT_EQ(c.coarse.swa_epochs, 5);
  EXPECT_EQ(c.coarse.model.base_filters, 4);
  EXPECT_EQ(c.coarse.model.depth, 2);
  EXPECT_DOUBLE_EQ(c.coarse.model.dropout, 0.5);
  EXPECT_EQ(c.fine.model.in_channels, 3);
  EXPECT_EQ(c.fine.downsample_factor, 1);
  EXPECT_TRUE(c.coarse.mixup && c.coarse.flip && c.coarse.transfer && c.coarse.use_prior);
  EXPECT_NO_THROW(c.coarse.validate());
  EXPECT_NO_THROW(c.fine.validate());
}

TEST(Config, ParsesKeysCommentsAndDims) {
  const auto c = parse("# comment\n"
                       "data_dir = data   # trailing\n"
                       "\n"
                       "phantom.dims = 32 40 48\n"
                       "phantom.classes = 4\n"
                       "coarse.tile = 16\n"
                       "fine.dropout = 0.25\n"
                       "mixup = off\n"
                       "seed = 7\n");
  EXPECT_EQ(c.data_dir, "data");
  EXPECT_EQ(c.phantom.dims, (Dims{32, 40, 48}));
  EXPECT_EQ(c.coarse.model.num_classes, 4);
  EXPECT_EQ(c.fine.model.num_classes, 4);
  EXPECT_EQ(c.coarse.tile_size, (Dims{16, 16, 16}));
  EXPECT_DOUBLE_EQ(c.fine.model.dropout, 0.25);
  EXPECT_DOUBLE_EQ(c.coarse.model.dropout, 0.5);
  EXPECT_FALSE(c.coarse.mixup);
  EXPECT_FALSE(c.fine.mixup);
  EXPECT_TRUE(c.assigned.count("data_dir"));
  EXPECT_FALSE(c.assigned.count("model_dir"));
}

TEST(Config, SeedPropagatesToDistinctModuleSeeds) {
  const auto a = parse("seed = 1\n"), b = parse("seed = 2\n");
  EXPECT_NE(a.phantom.seed, b.phantom.seed);
  EXPECT_NE(a.coarse.seed, a.fine.seed);
  EXPECT_NE(a.coarse.seed, a.phantom.seed);
  EXPECT_EQ(a.coarse.seed, parse("seed = 1\n").coarse.seed);
  EXPECT_EQ(a.coarse.seed, derive_seed(1, {1}));
}

TEST(Config, OverridesUseTheSameParser) {
  auto c = parse("coarse.epochs = 3\n");
  apply_override(c, "coarse.epochs=9");
  apply_override(c, " workers = 4 ");
  EXPECT_EQ(c.coarse.epochs, 9);
  EXPECT_EQ(c.workers, 4);
  expect_errc([&] { apply_override(c, "coarse.epochs"); }, Errc::usage);
  expect_errc([&] { apply_override(c, "nope=1"); }, Errc::configuration);
}

TEST(Config, ErrorsNameTheLine) {
  for (const char *bad : {"coarse.epochs = many\n", "unknown.key = 1\n", "just words\n", "mixup = maybe\n",
                          "phantom.dims = 1 2\n", "fine.dropout = 0.5x\n"}) {
    try {
      parse(std::string("seed = 0\n") + bad);
      ADD_FAILURE() << "accepted: " << bad;
    } catch (const Error &e) {
      EXPECT_EQ(e.code(), Errc::configuration) << bad;
      EXPECT_NE(e.message().find(":2:"), std::string::npos) << e.message();
    }
  }
}

TEST(Config, LoadResolvesRelativePaths) {
  TempDir d;
  std::ofstream(d / "run.cfg") << "data_dir = data\nmodel_dir = /abs/models\n";
  const auto c = load_config(d / "run.cfg");
  EXPECT_EQ(c.data_dir, d / "data");
  EXPECT_EQ(c.model_dir, "/abs/models");
  EXPECT_EQ(c.output_dir, d / "predictions");
  expect_errc([&] { load_config(d / "missing.cfg"); }, Errc::usage);
}

TEST(Config, RequireKeys) {
  const auto c = parse("data_dir = x\n");
  EXPECT_NO_THROW(c.require_keys({"data_dir"}, "synth"));
  expect_errc([&] { c.require_keys({"data_dir", "model_dir"}, "train"); }, Errc::configuration);
}

TEST(Config, EveryKeyIsSettable) {
  const std::map<std::string, std::string> sample{
      {"data_dir", "d"},          {"model_dir", "m"},         {"output_dir", "o"},
      {"seed", "3"},              {"workers", "2"},           {"n_train", "4"},
      {"n_test", "1"},            {"phantom.dims", "24"},     {"phantom.classes", "5"},
      {"phantom.noise_sigma", "0.1"}, {"phantom.jitter_voxels", "1"}, {"phantom.radius_jitter", "0.05"},
      {"phantom.prior_shift", "1"}, {"cascade", "false"},     {"prior", "no"},
      {"transfer", "yes"},        {"mixup", "1"},             {"mixup_alpha", "0.4"},
      {"flip", "0"},              {"mc_passes", "5"}};
  for (const auto &key : config_keys()) {
    RunConfig c;
    std::string v = "2";
    if (auto it = sample.find(key); it != sample.end())
      v = it->second;
    else if (key.ends_with("dropout") || key.ends_with("learning_rate"))
      v = "0.1";
    else if (key.ends_with(".tile"))
      v = "16 16 8";
    EXPECT_NO_THROW(set_config_value(c, key, v)) << key;
    EXPECT_TRUE(c.assigned.count(key)) << key;
  }
}

TEST(Config, ExampleFilesParse) {
  const std::filesystem::path dir = ASMNET_CONFIG_DIR;
  const auto example = load_config(dir / "example.cfg");
  RunConfig defaults;
  defaults.propagate_seed();
  EXPECT_EQ(example.coarse, defaults.coarse);
  EXPECT_EQ(example.fine, defaults.fine);
  EXPECT_EQ(example.phantom.dims, defaults.phantom.dims);
  EXPECT_EQ(example.n_train, defaults.n_train);
  // The annotated example lists every key.
  EXPECT_EQ(example.assigned.size(), config_keys().size());

  const auto acceptance = load_config(dir / "acceptance.cfg");
  EXPECT_EQ(acceptance.coarse.K, 3);
  EXPECT_EQ(acceptance.phantom.num_classes, 6);
  EXPECT_NO_THROW(acceptance.coarse.validate());
  EXPECT_NO_THROW(acceptance.fine.validate());
}
