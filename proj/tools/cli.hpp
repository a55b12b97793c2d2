// Command-line front end. Exit codes: 0 success, 1 runtime error, 2 usage or
// configuration error.
#pragma once

#include "asmnet.hpp"
#include "asmnet/run_config.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

namespace asmnet::cli {

namespace fs = std::filesystem;

struct Streams {
  std::ostream &out;
  std::ostream &err;
};

inline fs::path assembly_dir(const RunConfig &cfg, Scale s) { return cfg.model_dir / ("assembly-" + to_string(s)); }

inline RunConfig resolve_config(const std::string &path, const std::vector<std::string> &overrides,
                                std::optional<int> workers) {
  RunConfig cfg = path.empty() ? [] {
    RunConfig c;
    c.propagate_seed();
    return c;
  }()
                               : load_config(path);
  for (const auto &o : overrides)
    apply_override(cfg, o);
  if (workers)
    cfg.workers = *workers;
  require(cfg.workers >= 1, Errc::usage, "workers must be >= 1");
  return cfg;
}

inline void write_text(const fs::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  require(static_cast<bool>(out), Errc::io, "cannot write " + path.string());
}

inline int cmd_synth(const RunConfig &cfg, Streams io) {
  cfg.require_keys({"data_dir"}, "synth");
  const auto m = generate_dataset(cfg.n_train, cfg.n_test, cfg.phantom, cfg.data_dir);
  io.out << "wrote " << m.subjects("train").size() << " train and " << m.subjects("test").size()
         << " test subjects to " << cfg.data_dir.string() << '\n';
  return 0;
}

inline int cmd_train(const RunConfig &cfg, const std::string &scale, Streams io) {
  cfg.require_keys({"data_dir", "model_dir"}, "train");
  const auto manifest = read_manifest(cfg.data_dir / manifest_name);
  const auto train = load_split(manifest, "train");
  const bool do_coarse = scale == "coarse" || scale == "both";
  const bool do_fine = scale == "fine" || (scale == "both" && cfg.cascade);

  // Each assembly directory carries its own run log next to the weights.
  auto run = [&](const AssemblyConfig &ac, const CoarseProvider &provider) {
    const auto dir = assembly_dir(cfg, ac.scale);
    fs::create_directories(dir);
    std::ofstream log(dir / "train.log", std::ios::trunc);
    TrainOptions o;
    o.workers = cfg.workers;
    o.log = &log;
    TrainReport report;
    auto model = train_assembly(train, ac, provider, o, &report);
    save_assembly(model, dir);
    io.out << to_string(ac.scale) << " assembly: " << model.nodes.size() << " members, " << report.makespan
           << " s wall\n";
    return model;
  };
  std::optional<AssemblyModel> coarse;
  if (do_coarse)
    coarse = run(cfg.coarse, {});
  if (do_fine) {
    if (!coarse)
      coarse = load_assembly(assembly_dir(cfg, Scale::coarse));
    run(cfg.fine, coarse_provider(*coarse, cfg.workers));
  }
  return 0;
}

/// Writes `<id>_coarse.nii` and, with the cascade on, `<id>_cascade.nii`.
inline int cmd_predict(const RunConfig &cfg, const std::string &subject, Streams io) {
  cfg.require_keys({"data_dir", "model_dir"}, "predict");
  const auto manifest = read_manifest(cfg.data_dir / manifest_name);
  const auto coarse = load_assembly(assembly_dir(cfg, Scale::coarse));
  std::optional<AssemblyModel> fine;
  if (cfg.cascade)
    fine = load_assembly(assembly_dir(cfg, Scale::fine));
  const auto ids = subject.empty() ? manifest.subjects("test") : std::vector<std::string>{subject};
  require(!ids.empty(), Errc::usage, "no subjects to predict");
  fs::create_directories(cfg.output_dir);
  for (const auto &id : ids) {
    const auto s = load_subject(manifest, id, false);
    if (fine) {
      const auto r = run_cascade(coarse, *fine, s, cfg.workers);
      nifti::write_nifti(r.coarse_upsampled, cfg.output_dir / (id + "_coarse.nii"));
      nifti::write_nifti(r.fine, cfg.output_dir / (id + "_cascade.nii"));
    } else {
      nifti::write_nifti(coarse_segmentation(coarse, s, cfg.workers), cfg.output_dir / (id + "_coarse.nii"));
    }
    io.out << "segmented " << id << '\n';
  }
  return 0;
}

/// Scores every prediction found for the test subjects, plus the atlas prior.
inline int cmd_eval(const RunConfig &cfg, const std::string &csv_path, Streams io) {
  cfg.require_keys({"data_dir"}, "eval");
  const auto manifest = read_manifest(cfg.data_dir / manifest_name);
  std::vector<DiceRecord> records;
  for (const auto &id : manifest.subjects("test")) {
    const auto s = load_subject(manifest, id, true);
    const int C = s.num_classes();
    records.push_back({"atlas prior", id, mean_dice(s.prior, *s.ground_truth, C)});
    for (const char *method : {"coarse", "cascade"}) {
      const auto p = cfg.output_dir / (id + "_" + method + ".nii");
      if (fs::exists(p))
        records.push_back({method, id, mean_dice(nifti::read_labels(p, C), *s.ground_truth, C)});
    }
  }
  require(records.size() > manifest.subjects("test").size(), Errc::usage,
          "no predictions found in " + cfg.output_dir.string() + "; run predict first");
  write_table(io.out, records);
  const fs::path csv = csv_path.empty() ? cfg.output_dir / "dice.csv" : fs::path(csv_path);
  std::ostringstream text;
  write_csv(text, records);
  write_text(csv, text.str());
  io.out << "csv: " << csv.string() << '\n';
  return 0;
}

/// Per-node durations (canonical order) from a training log.
inline std::vector<double> durations_from_log(const fs::path &path, int K) {
  std::ifstream in(path);
  require(static_cast<bool>(in), Errc::io, "cannot open " + path.string());
  std::vector<double> d(static_cast<std::size_t>(K * K * K), 0.0);
  const std::regex re(R"(finish node \((\d+),(\d+),(\d+)\) worker \d+ seconds ([0-9.eE+-]+))");
  std::string line;
  while (std::getline(in, line)) {
    std::smatch m;
    if (!std::regex_search(line, m, re))
      continue;
    const GridIndex g{std::stoi(m[1]), std::stoi(m[2]), std::stoi(m[3])};
    require(g.i < K && g.j < K && g.k < K, Errc::format, path.string() + ": node outside the K grid");
    d[static_cast<std::size_t>(linear_index(g, K))] = std::max(std::stod(m[4]), 1e-9);
  }
  for (double x : d)
    require(x > 0.0, Errc::format, path.string() + ": log does not cover every node");
  return d;
}

inline int cmd_schedule(int K, int workers, bool unit, const std::string &log, Streams io) {
  require(K >= 1, Errc::usage, "--k must be >= 1");
  require(workers >= 1, Errc::usage, "--workers must be >= 1");
  require(unit != !log.empty(), Errc::usage, "give exactly one of --unit-durations or --from-log");
  const auto d = unit ? std::vector<double>(static_cast<std::size_t>(K * K * K), 1.0) : durations_from_log(log, K);
  write_schedule_report(io.out, simulate_schedule(K, d, workers));
  return 0;
}

inline Axis parse_axis(const std::string &a) {
  if (a == "x")
    return Axis::x;
  if (a == "y")
    return Axis::y;
  if (a == "z")
    return Axis::z;
  fail(Errc::usage, "axis must be x, y or z");
}

inline int cmd_slices(const std::string &input, bool labels, const std::string &axis, std::optional<int> index,
                      const std::string &output, Streams io) {
  const Axis a = parse_axis(axis);
  const auto img = nifti::read_nifti(input, labels);
  std::visit(
      [&](const auto &g) {
        const int axis_len = g.dims[static_cast<int>(a)];
        const int idx = index ? *index : axis_len / 2;
        export_slice(g, a, idx, output);
      },
      img);
  io.out << "wrote " << output << '\n';
  return 0;
}

inline int dispatch(int argc, const char *const *argv, Streams io) {
  CLI::App app{"asmnet: assemblies of local 3D segmentation networks on synthetic phantoms"};
  app.require_subcommand(1);
  std::string config;
  std::vector<std::string> overrides;
  std::optional<int> workers;

  auto add_common = [&](CLI::App *sub, bool needs_config) {
    auto *opt = sub->add_option("-c,--config", config, "Configuration file (key = value lines)");
    if (needs_config)
      opt->required()->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "Override a configuration key: --set key=value (repeatable)");
    sub->add_option("-w,--workers", workers, "Worker threads (overrides 'workers')");
  };

  auto *synth = app.add_subcommand("synth", "Generate a phantom dataset and its manifest");
  add_common(synth, false);

  auto *train = app.add_subcommand("train", "Train the coarse and/or fine assembly");
  add_common(train, true);
  std::string scale = "both";
  train->add_option("--scale", scale, "coarse, fine or both")->check(CLI::IsMember({"coarse", "fine", "both"}));

  auto *predict = app.add_subcommand("predict", "Segment test subjects (or one subject) with the trained assemblies");
  add_common(predict, true);
  std::string subject;
  predict->add_option("--subject", subject, "Subject id from the manifest (default: every test subject)");

  auto *eval = app.add_subcommand("eval", "Dice report over the test subjects' predictions");
  add_common(eval, true);
  std::string csv;
  eval->add_option("--csv", csv, "CSV output path (default: <output_dir>/dice.csv)");

  auto *schedule = app.add_subcommand("schedule", "Transfer DAG report and makespan simulation");
  int k = 5, sched_workers = 1;
  bool unit = false;
  std::string from_log;
  schedule->add_option("-k,--k", k, "Tiles per axis");
  schedule->add_option("-w,--workers", sched_workers, "Simulated workers");
  schedule->add_flag("--unit-durations", unit, "Every node takes one time unit");
  schedule->add_option("--from-log", from_log, "Replay per-node durations from a training log");

  auto *slices = app.add_subcommand("slices", "Export one slice of a NIfTI volume as PGM (intensity) or PPM (labels)");
  std::string input, output, axis = "z";
  bool labels = false;
  std::optional<int> index;
  slices->add_option("-i,--input", input, "NIfTI file")->required()->check(CLI::ExistingFile);
  slices->add_option("-o,--output", output, "Output .pgm/.ppm")->required();
  slices->add_option("--axis", axis, "x, y or z")->check(CLI::IsMember({"x", "y", "z"}));
  slices->add_option("--index", index, "Slice index (default: middle)");
  slices->add_flag("--labels", labels, "Treat the input as a label map");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e, io.out, io.err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth)
      return cmd_synth(resolve_config(config, overrides, workers), io);
    if (*train)
      return cmd_train(resolve_config(config, overrides, workers), scale, io);
    if (*predict)
      return cmd_predict(resolve_config(config, overrides, workers), subject, io);
    if (*eval)
      return cmd_eval(resolve_config(config, overrides, workers), csv, io);
    if (*schedule)
      return cmd_schedule(k, sched_workers, unit, from_log, io);
    if (*slices)
      return cmd_slices(input, labels, axis, index, output, io);
  } catch (const Error &e) {
    io.err << "asmnet: " << e.what() << '\n';
    return e.code() == Errc::usage || e.code() == Errc::configuration ? 2 : 1;
  } catch (const std::exception &e) {
    io.err << "asmnet: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

} // namespace asmnet::cli
