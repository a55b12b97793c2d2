/**
 * @file transfer.hpp
 * @brief Nearest-neighbour transfer DAG over the K^3 grid and a list-scheduling
 * simulator for training it on P workers.
 *
 * Axes: j runs along the first column (i = 0, k = 0), i indexes columns within
 * a plane and k indexes planes. The root (0,0,0) trains from scratch; every
 * other node starts from its predecessor's final weights.
 */
#pragma once

#include "asmnet/error.hpp"
#include "asmnet/tiling.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace asmnet {

inline std::optional<GridIndex> predecessor(GridIndex g, int K) {
  require(K >= 1, Errc::parameter, "K must be >= 1");
  require(g.i >= 0 && g.j >= 0 && g.k >= 0 && g.i < K && g.j < K && g.k < K, Errc::parameter,
          "grid index " + to_string(g) + " out of range for K=" + std::to_string(K));
  if (g.k > 0)
    return GridIndex{g.i, g.j, g.k - 1};
  if (g.i > 0)
    return GridIndex{g.i - 1, g.j, 0};
  if (g.j > 0)
    return GridIndex{0, g.j - 1, 0};
  return std::nullopt;
}

/// Canonical order: plane by plane, and within a plane column by column (i
/// ascending) with j ascending inside each column.
inline std::vector<GridIndex> topological_order(int K) {
  require(K >= 1, Errc::parameter, "K must be >= 1");
  std::vector<GridIndex> order;
  order.reserve(static_cast<std::size_t>(K * K * K));
  for (int k = 0; k < K; ++k)
    for (int i = 0; i < K; ++i)
      for (int j = 0; j < K; ++j)
        order.push_back({i, j, k});
  return order;
}

/// True when every node appears exactly once and after its predecessor.
inline bool is_valid_order(const std::vector<GridIndex> &order, int K) {
  const auto n = static_cast<std::size_t>(K * K * K);
  if (order.size() != n)
    return false;
  std::vector<int> pos(n, -1);
  for (std::size_t p = 0; p < order.size(); ++p) {
    const auto &g = order[p];
    if (g.i < 0 || g.j < 0 || g.k < 0 || g.i >= K || g.j >= K || g.k >= K)
      return false;
    auto &slot = pos[static_cast<std::size_t>(linear_index(g, K))];
    if (slot != -1)
      return false;
    slot = static_cast<int>(p);
  }
  for (const auto &g : order)
    if (auto p = predecessor(g, K); p && pos[static_cast<std::size_t>(linear_index(*p, K))] >
                                             pos[static_cast<std::size_t>(linear_index(g, K))])
      return false;
  return true;
}

/// Nodes on the longest root-to-leaf chain: the deepest node (K-1,K-1,K-1)
/// sits at depth (K-1) along each of j, i and k.
inline int critical_path_length(int K) {
  require(K >= 1, Errc::parameter, "K must be >= 1");
  return 3 * (K - 1) + 1;
}

struct ScheduledNode {
  GridIndex node;
  std::optional<GridIndex> pred;
  double start = 0.0;
  double finish = 0.0;
  int worker = 0;
};

struct SchedulePlan {
  int K = 1;
  int workers = 1;
  std::vector<ScheduledNode> nodes; ///< indexed by linear_index
  double makespan = 0.0;

  /// Busy time over workers * makespan.
  double utilization() const {
    double busy = 0.0;
    for (const auto &n : nodes)
      busy += n.finish - n.start;
    return makespan > 0.0 ? busy / (double(workers) * makespan) : 0.0;
  }
};

/**
 * Greedy list scheduling. At each event time the ready nodes (predecessor
 * finished) go to idle workers in canonical topological order, lowest worker
 * id first. `durations` is indexed by linear_index.
 */
inline SchedulePlan simulate_schedule(int K, const std::vector<double> &durations, int P) {
  require(K >= 1, Errc::parameter, "K must be >= 1");
  require(P >= 1, Errc::parameter, "worker count must be >= 1");
  const auto n = static_cast<std::size_t>(K * K * K);
  require(durations.size() == n, Errc::parameter,
          "expected " + std::to_string(n) + " durations, got " + std::to_string(durations.size()));
  for (double d : durations)
    require(d > 0.0, Errc::parameter, "durations must be positive");

  const auto order = topological_order(K);
  SchedulePlan plan;
  plan.K = K;
  plan.workers = P;
  plan.nodes.resize(n);
  std::vector<bool> started(n, false), done(n, false);
  std::vector<double> worker_free(static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(P), n)), 0.0);
  std::vector<int> running(worker_free.size(), -1);
  std::size_t finished = 0;
  double now = 0.0;

  while (finished < n) {
    // Retire everything finishing at the current instant.
    for (std::size_t w = 0; w < running.size(); ++w)
      if (running[w] >= 0 && worker_free[w] <= now) {
        done[static_cast<std::size_t>(running[w])] = true;
        running[w] = -1;
        ++finished;
      }
    for (const auto &g : order) {
      const auto id = static_cast<std::size_t>(linear_index(g, K));
      if (started[id])
        continue;
      const auto p = predecessor(g, K);
      if (p && !done[static_cast<std::size_t>(linear_index(*p, K))])
        continue;
      const auto idle = std::find(running.begin(), running.end(), -1);
      if (idle == running.end())
        break;
      const auto w = static_cast<std::size_t>(idle - running.begin());
      started[id] = true;
      running[w] = static_cast<int>(id);
      worker_free[w] = now + durations[id];
      plan.nodes[id] = {g, p, now, worker_free[w], static_cast<int>(w)};
    }
    double next = std::numeric_limits<double>::infinity();
    for (std::size_t w = 0; w < running.size(); ++w)
      if (running[w] >= 0)
        next = std::min(next, worker_free[w]);
    if (next == std::numeric_limits<double>::infinity())
      break;
    now = next;
  }
  for (const auto &s : plan.nodes)
    plan.makespan = std::max(plan.makespan, s.finish);
  return plan;
}

inline SchedulePlan simulate_schedule_unit(int K, int P) {
  return simulate_schedule(K, std::vector<double>(static_cast<std::size_t>(K * K * K), 1.0), P);
}

/// Table of node, predecessor, start, finish and worker in canonical order,
/// then a summary line.
inline void write_schedule_report(std::ostream &os, const SchedulePlan &plan) {
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %-10s %12s %12s %6s\n", "node", "pred", "start", "finish", "worker");
  os << line;
  for (const auto &g : topological_order(plan.K)) {
    const auto &s = plan.nodes[static_cast<std::size_t>(linear_index(g, plan.K))];
    std::snprintf(line, sizeof line, "%-10s %-10s %12.4f %12.4f %6d\n", to_string(g).c_str(),
                  s.pred ? to_string(*s.pred).c_str() : "-", s.start, s.finish, s.worker);
    os << line;
  }
  std::snprintf(line, sizeof line, "makespan %.6g workers %d utilization %.4f critical_path %d\n", plan.makespan,
                plan.workers, plan.utilization(), critical_path_length(plan.K));
  os << line;
}

} // namespace asmnet
