/**
 * @file evaluation.hpp
 * @brief Dice overlap and comparison reports.
 *
 * A label absent from both maps scores 1. Mean Dice skips background and any
 * label absent from the ground truth.
 */
#pragma once

#include "asmnet/error.hpp"
#include "asmnet/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace asmnet {

inline std::vector<double> dice_per_label(const LabelMap &pred, const LabelMap &gt, int num_classes) {
  require(pred.dims == gt.dims, Errc::parameter,
          "dice: prediction dims " + to_string(pred.dims) + " != ground truth dims " + to_string(gt.dims));
  require(num_classes >= 1, Errc::parameter, "dice: num_classes must be positive");
  const auto C = static_cast<std::size_t>(num_classes);
  std::vector<std::uint64_t> p(C, 0), g(C, 0), both(C, 0);
  for (std::size_t v = 0; v < pred.size(); ++v) {
    const std::size_t a = pred.data[v], b = gt.data[v];
    require(a < C && b < C, Errc::parameter, "dice: label out of range at voxel " + std::to_string(v));
    ++p[a];
    ++g[b];
    if (a == b)
      ++both[a];
  }
  std::vector<double> out(C);
  for (std::size_t c = 0; c < C; ++c)
    out[c] = p[c] + g[c] == 0 ? 1.0 : 2.0 * double(both[c]) / double(p[c] + g[c]);
  return out;
}

inline double mean_dice(const LabelMap &pred, const LabelMap &gt, int num_classes) {
  const auto d = dice_per_label(pred, gt, num_classes);
  std::vector<bool> present(static_cast<std::size_t>(num_classes), false);
  for (auto l : gt.data)
    present[l] = true;
  double sum = 0.0;
  int n = 0;
  for (std::size_t c = 1; c < d.size(); ++c)
    if (present[c]) {
      sum += d[c];
      ++n;
    }
  require(n > 0, Errc::degenerate_input, "mean dice: ground truth contains only background");
  return sum / n;
}

struct DiceRecord {
  std::string method;
  std::string subject;
  double mean_dice = 0.0;
};

struct MethodSummary {
  std::string method;
  double mean = 0.0;
  double sd = 0.0; ///< sample standard deviation over subjects (0 for one subject)
  std::vector<DiceRecord> rows;
};

/// Groups records by method, ordered by ascending mean (best last).
inline std::vector<MethodSummary> summarize(const std::vector<DiceRecord> &records) {
  require(!records.empty(), Errc::parameter, "report needs at least one result");
  std::map<std::string, MethodSummary> by_method;
  std::vector<std::string> first_seen;
  for (const auto &r : records) {
    auto [it, inserted] = by_method.try_emplace(r.method);
    if (inserted) {
      it->second.method = r.method;
      first_seen.push_back(r.method);
    }
    it->second.rows.push_back(r);
  }
  std::vector<MethodSummary> out;
  for (const auto &name : first_seen) {
    auto s = by_method.at(name);
    for (const auto &r : s.rows)
      s.mean += r.mean_dice;
    s.mean /= double(s.rows.size());
    if (s.rows.size() > 1) {
      for (const auto &r : s.rows)
        s.sd += (r.mean_dice - s.mean) * (r.mean_dice - s.mean);
      s.sd = std::sqrt(s.sd / double(s.rows.size() - 1));
    }
    out.push_back(std::move(s));
  }
  std::stable_sort(out.begin(), out.end(), [](const auto &a, const auto &b) { return a.mean < b.mean; });
  return out;
}

/// Dice as a percentage with one decimal, e.g. 0.733 -> "73.3".
inline std::string percent(double dice) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * dice);
  return buf;
}

inline void write_table(std::ostream &os, const std::vector<DiceRecord> &records) {
  const auto summary = summarize(records);
  std::size_t width = 6;
  for (const auto &s : summary)
    width = std::max(width, s.method.size());
  char line[256];
  std::snprintf(line, sizeof line, "%-*s %14s  %s\n", static_cast<int>(width), "Method", "Mean Dice in %",
                "per subject");
  os << line;
  for (const auto &s : summary) {
    std::string cell = percent(s.mean) + " (" + percent(s.sd) + ")";
    std::string subjects;
    for (const auto &r : s.rows)
      subjects += (subjects.empty() ? "" : " ") + r.subject + "=" + percent(r.mean_dice);
    std::snprintf(line, sizeof line, "%-*s %14s  ", static_cast<int>(width), s.method.c_str(), cell.c_str());
    os << line << subjects << '\n';
  }
}

inline void write_csv(std::ostream &os, const std::vector<DiceRecord> &records) {
  os << "method,subject,mean_dice\n";
  char buf[32];
  for (const auto &r : records) {
    std::snprintf(buf, sizeof buf, "%.6f", r.mean_dice);
    os << r.method << ',' << r.subject << ',' << buf << '\n';
  }
}

inline std::vector<DiceRecord> read_csv(std::istream &in) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) && line == "method,subject,mean_dice", Errc::format,
          "dice csv: missing header");
  std::vector<DiceRecord> out;
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    const auto a = line.find(','), b = line.rfind(',');
    require(a != std::string::npos && b != a, Errc::format, "dice csv: malformed row '" + line + "'");
    out.push_back({line.substr(0, a), line.substr(a + 1, b - a - 1), std::stod(line.substr(b + 1))});
  }
  return out;
}

} // namespace asmnet
