/**
 * @file synth.hpp
 * @brief Deterministic ellipsoid phantoms and on-disk datasets.
 *
 * Labels: 0 background, 1 left blob, 2 right blob, 3 shell, 4 core, 5 stem.
 * With fewer than 6 classes the highest-numbered structures are left out.
 * Structure centres are offsets from the volume centre, so a phantom without
 * jitter is exactly mirror-symmetric about x = (Dx - 1) / 2.
 */
#pragma once

#include "asmnet/error.hpp"
#include "asmnet/nifti.hpp"
#include "asmnet/seed.hpp"
#include "asmnet/subject.hpp"
#include "asmnet/volume.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace asmnet {

struct PhantomSpec {
  Dims dims{48, 48, 48};
  int num_classes = 6;
  double noise_sigma = 0.05;    ///< in units of the [0, 1] intensity range
  double jitter_voxels = 2.0;   ///< max per-axis translation of each structure
  double radius_jitter = 0.1;   ///< max relative radius perturbation
  double prior_shift = 2.0;     ///< max per-axis centre shift of the prior's structures
  std::uint64_t seed = 0;

  void validate() const {
    require(num_classes >= 3 && num_classes <= 6, Errc::spec,
            "phantom supports 3..6 classes, got " + std::to_string(num_classes));
    require(dims.x >= 16 && dims.y >= 16 && dims.z >= 16, Errc::spec, "phantom dims must be >= 16 per axis");
    require(noise_sigma >= 0.0 && jitter_voxels >= 0.0 && radius_jitter >= 0.0 && radius_jitter < 1.0 &&
                prior_shift >= 0.0,
            Errc::spec, "phantom jitter and noise parameters must be non-negative");
  }
};

struct Ellipsoid {
  std::uint16_t label = 0;
  std::array<double, 3> offset{}; ///< centre relative to the volume centre, voxels
  std::array<double, 3> radius{};
};

namespace detail {

/// Nominal structures in paint order (later ones overwrite earlier ones).
inline std::vector<Ellipsoid> nominal_structures(const PhantomSpec &s) {
  const double X = s.dims.x, Y = s.dims.y, Z = s.dims.z;
  std::vector<Ellipsoid> all = {
      {3, {0.0, 0.0, 0.04 * Z}, {0.32 * X, 0.32 * Y, 0.30 * Z}},             // shell
      {5, {0.0, 0.0, -0.24 * Z}, {0.08 * X, 0.08 * Y, 0.12 * Z}},            // stem
      {4, {0.0, 0.10 * Y, 0.06 * Z}, {0.10 * X, 0.12 * Y, 0.10 * Z}},        // core
      {1, {-0.20 * X, -0.06 * Y, 0.06 * Z}, {0.09 * X, 0.12 * Y, 0.10 * Z}}, // left blob
      {2, {0.20 * X, -0.06 * Y, 0.06 * Z}, {0.09 * X, 0.12 * Y, 0.10 * Z}},  // right blob
  };
  std::vector<Ellipsoid> out;
  for (const auto &e : all)
    if (e.label < s.num_classes)
      out.push_back(e);
  return out;
}

inline std::vector<Ellipsoid> perturb(std::vector<Ellipsoid> es, double shift, double radius_frac, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto &e : es)
    for (std::size_t a = 0; a < 3; ++a) {
      e.offset[a] += shift * u(rng);
      e.radius[a] *= 1.0 + radius_frac * u(rng);
    }
  return es;
}

inline LabelMap rasterize(const PhantomSpec &s, const std::vector<Ellipsoid> &es) {
  LabelMap out(s.dims, s.num_classes);
  const std::array<double, 3> centre{(s.dims.x - 1) / 2.0, (s.dims.y - 1) / 2.0, (s.dims.z - 1) / 2.0};
  for (const auto &e : es) {
    for (int a = 0; a < 3; ++a) {
      const auto sa = static_cast<std::size_t>(a);
      const double lo = centre[sa] + e.offset[sa] - e.radius[sa], hi = centre[sa] + e.offset[sa] + e.radius[sa];
      require(lo >= 0.0 && hi <= s.dims[a] - 1.0, Errc::spec,
              "structure " + std::to_string(e.label) + " exceeds the volume along axis " + std::to_string(a));
    }
    for (int z = 0; z < s.dims.z; ++z)
      for (int y = 0; y < s.dims.y; ++y)
        for (int x = 0; x < s.dims.x; ++x) {
          // Relative coordinates first so that mirrored voxels give exactly negated values.
          const std::array<double, 3> rel{x - centre[0], y - centre[1], z - centre[2]};
          double r2 = 0.0;
          for (std::size_t a = 0; a < 3; ++a) {
            const double d = (rel[a] - e.offset[a]) / e.radius[a];
            r2 += d * d;
          }
          if (r2 <= 1.0)
            out.at(x, y, z) = e.label;
        }
  }
  return out;
}

} // namespace detail

inline std::vector<LabelPair> phantom_swap_table(int num_classes) {
  return num_classes > 2 ? std::vector<LabelPair>{{1, 2}} : std::vector<LabelPair>{};
}

/// Class mean intensity: evenly spaced over [0, 1] in label order.
inline double phantom_class_mean(int label, int num_classes) { return double(label) / double(num_classes - 1); }

inline Subject generate_phantom(const PhantomSpec &spec, std::uint64_t subject_seed) {
  spec.validate();
  std::mt19937_64 rng(derive_seed(spec.seed, {subject_seed}));
  const auto nominal = detail::nominal_structures(spec);
  const auto truth = detail::perturb(nominal, spec.jitter_voxels, spec.radius_jitter, rng);
  const auto prior = detail::perturb(truth, spec.prior_shift, spec.radius_jitter, rng);

  Subject s;
  s.id = "subject_" + std::to_string(subject_seed);
  s.ground_truth = detail::rasterize(spec, truth);
  s.prior = detail::rasterize(spec, prior);
  s.mask = LabelMap(spec.dims, 2);
  s.intensity = Volume(spec.dims);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  for (std::size_t v = 0; v < s.intensity.size(); ++v) {
    const int label = s.ground_truth->data[v];
    s.mask.data[v] = label != 0 ? 1 : 0;
    const double n = spec.noise_sigma > 0.0 ? noise(rng) : 0.0;
    s.intensity.data[v] = static_cast<float>(phantom_class_mean(label, spec.num_classes) + n);
  }
  s.swap_table = phantom_swap_table(spec.num_classes);
  return s;
}

// Dataset on disk ----------------------------------------------------------

struct ManifestEntry {
  std::string id;
  std::string role; ///< intensity, labels, mask, prior; pseudo-roles "split" and "swap" carry a value
  std::string value;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  std::vector<std::string> subjects(const std::string &split) const {
    std::vector<std::string> ids;
    for (const auto &e : entries)
      if (e.role == "split" && e.value == split)
        ids.push_back(e.id);
    return ids;
  }

  std::filesystem::path file(const std::string &id, const std::string &role) const {
    for (const auto &e : entries)
      if (e.id == id && e.role == role) {
        std::filesystem::path p(e.value);
        return p.is_absolute() ? p : root / p;
      }
    fail(Errc::format, "manifest has no " + role + " entry for " + id);
  }
};

inline constexpr const char *manifest_name = "manifest.tsv";

inline void write_manifest(const DatasetManifest &m, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), Errc::io, "cannot write " + path.string());
  for (const auto &e : m.entries)
    out << e.id << '\t' << e.role << '\t' << e.value << '\n';
  require(static_cast<bool>(out), Errc::io, "write failed for " + path.string());
}

/// Reads `id<TAB>role<TAB>path` lines; relative paths resolve against the
/// manifest's directory.
inline DatasetManifest read_manifest(const std::filesystem::path &path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), Errc::io, "cannot open manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#')
      continue;
    std::istringstream ls(line);
    ManifestEntry e;
    require(std::getline(ls, e.id, '\t') && std::getline(ls, e.role, '\t') && std::getline(ls, e.value) &&
                !e.id.empty() && !e.role.empty(),
            Errc::format, path.string() + ":" + std::to_string(lineno) + ": expected id<TAB>role<TAB>path");
    m.entries.push_back(std::move(e));
  }
  return m;
}

/**
 * Writes n_train + n_test subjects under `root/<id>/` plus `root/manifest.tsv`.
 * Subject n uses subject seed n, so seeds and ids never repeat across splits.
 */
inline DatasetManifest generate_dataset(int n_train, int n_test, const PhantomSpec &spec,
                                        const std::filesystem::path &root) {
  require(n_train >= 1 && n_test >= 1, Errc::parameter, "dataset needs at least one train and one test subject");
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  require(!ec, Errc::io, "cannot create " + root.string() + ": " + ec.message());
  DatasetManifest m;
  m.root = root;
  for (int n = 0; n < n_train + n_test; ++n) {
    const bool train = n < n_train;
    char id[32];
    std::snprintf(id, sizeof id, "%s_%03d", train ? "train" : "test", train ? n : n - n_train);
    auto s = generate_phantom(spec, static_cast<std::uint64_t>(n));
    s.id = id;
    const auto dir = root / s.id;
    std::filesystem::create_directories(dir, ec);
    require(!ec, Errc::io, "cannot create " + dir.string() + ": " + ec.message());
    nifti::write_nifti(s.intensity, dir / "intensity.nii");
    nifti::write_nifti(*s.ground_truth, dir / "labels.nii");
    nifti::write_nifti(s.mask, dir / "mask.nii");
    nifti::write_nifti(s.prior, dir / "prior.nii");
    m.entries.push_back({s.id, "split", train ? "train" : "test"});
    for (const char *role : {"intensity", "labels", "mask", "prior"})
      m.entries.push_back({s.id, role, s.id + "/" + role + ".nii"});
    for (const auto &[l, r] : s.swap_table)
      m.entries.push_back({s.id, "swap", std::to_string(l) + ":" + std::to_string(r)});
  }
  write_manifest(m, root / manifest_name);
  return m;
}

inline Subject load_subject(const DatasetManifest &m, const std::string &id, bool with_labels = true) {
  Subject s;
  s.id = id;
  s.intensity = nifti::read_volume(m.file(id, "intensity"));
  s.prior = nifti::read_labels(m.file(id, "prior"));
  s.mask = nifti::read_labels(m.file(id, "mask"), 2);
  if (with_labels)
    s.ground_truth = nifti::read_labels(m.file(id, "labels"), s.prior.num_classes);
  for (const auto &e : m.entries)
    if (e.id == id && e.role == "swap") {
      unsigned l = 0, r = 0;
      char sep = 0;
      std::istringstream vs(e.value);
      require(static_cast<bool>(vs >> l >> sep >> r) && sep == ':', Errc::format,
              "bad swap pair '" + e.value + "' for " + id);
      s.swap_table.emplace_back(static_cast<std::uint16_t>(l), static_cast<std::uint16_t>(r));
    }
  s.validate();
  return s;
}

inline std::vector<Subject> load_split(const DatasetManifest &m, const std::string &split, bool with_labels = true) {
  std::vector<Subject> out;
  for (const auto &id : m.subjects(split))
    out.push_back(load_subject(m, id, with_labels));
  require(!out.empty(), Errc::format, "manifest has no " + split + " subjects");
  return out;
}

} // namespace asmnet
