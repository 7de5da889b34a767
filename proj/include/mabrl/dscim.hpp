#pragma once

// Dynamic self-cycling interaction: when an agent interacts (its reward is at
// or below the team mean), whom it consults (nearest agents by Euclidean
// distance), and what it receives (the mean of their observations).

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "mabrl/linalg.hpp"

namespace mabrl {

struct AgentPosition {
  double x = 0.0;
  double y = 0.0;
};

enum class NeighborMode {
  Nearest,       // every agent at the minimum distance (ties included)
  AllOthers,  // every agent with d >= d_min, i.e. all other agents
};

struct InteractionDecision {
  bool interact = false;
  std::vector<std::size_t> neighbor_ids;
  Matrix joint_info;  // 1 x joint_dim, zeros when !interact
};

inline double global_threshold(std::span<const double> rewards) {
  if (rewards.empty()) throw std::invalid_argument("global_threshold: no rewards");
  double sum = 0.0;
  for (double r : rewards) sum += r;
  return sum / static_cast<double>(rewards.size());
}

inline bool needs_interaction(double reward, double threshold) { return reward <= threshold; }

inline double distance(const AgentPosition& a, const AgentPosition& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

/// Indices of the agents `local` should consult, ascending. Empty for a lone agent.
inline std::vector<std::size_t> select_neighbors(std::span<const AgentPosition> positions,
                                                 std::size_t local,
                                                 NeighborMode mode = NeighborMode::Nearest) {
  if (local >= positions.size()) throw std::out_of_range("select_neighbors: bad local index");
  std::vector<std::size_t> out;
  if (positions.size() < 2) return out;

  std::vector<double> d(positions.size(), 0.0);
  double d_min = INFINITY;
  for (std::size_t j = 0; j < positions.size(); ++j) {
    if (j == local) continue;
    d[j] = distance(positions[local], positions[j]);
    d_min = std::min(d_min, d[j]);
  }
  for (std::size_t j = 0; j < positions.size(); ++j) {
    if (j == local) continue;
    const bool take = mode == NeighborMode::Nearest ? d[j] <= d_min : d[j] >= d_min;
    if (take) out.push_back(j);
  }
  return out;
}

/// Entrywise mean of the selected observation vectors, as a 1 x dim row.
inline Matrix aggregate(std::span<const std::vector<double>> observations,
                        std::span<const std::size_t> neighbor_ids) {
  if (neighbor_ids.empty()) throw std::invalid_argument("aggregate: no neighbors selected");
  const std::size_t dim = observations[neighbor_ids.front()].size();
  std::vector<double> sum(dim, 0.0);
  for (std::size_t j : neighbor_ids) {
    if (j >= observations.size()) throw std::out_of_range("aggregate: neighbor index out of range");
    if (observations[j].size() != dim)
      throw DimensionError("aggregate: observation dimensions differ");
    for (std::size_t c = 0; c < dim; ++c) sum[c] += observations[j][c];
  }
  const double inv = 1.0 / static_cast<double>(neighbor_ids.size());
  for (double& v : sum) v *= inv;
  return Matrix(1, dim, std::move(sum));
}

/// Full decision for agent `local` from one consistent snapshot of the team.
inline InteractionDecision decide_interaction(std::span<const double> rewards,
                                              std::span<const AgentPosition> positions,
                                              std::span<const std::vector<double>> observations,
                                              std::size_t local,
                                              NeighborMode mode = NeighborMode::Nearest) {
  const std::size_t dim = observations[local].size();
  InteractionDecision out{false, {}, Matrix(1, dim)};
  if (positions.size() < 2) return out;
  if (!needs_interaction(rewards[local], global_threshold(rewards))) return out;
  out.neighbor_ids = select_neighbors(positions, local, mode);
  if (out.neighbor_ids.empty()) return out;
  out.interact = true;
  out.joint_info = aggregate(observations, out.neighbor_ids);
  return out;
}

}  // namespace mabrl
