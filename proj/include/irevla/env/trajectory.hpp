#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "irevla/nn/tensor.hpp"

namespace irevla::env {

struct Transition {
  nn::Tensor obs;     // [m x d_in], instruction token included
  nn::Tensor action;  // [d_a], each component in [-1, 1]
  double reward = 0.0;
  bool done = false;
};

struct Trajectory {
  std::string task_id;
  std::uint64_t seed = 0;
  std::vector<Transition> steps;
  bool success = false;

  std::size_t size() const { return steps.size(); }
};

// Binary sparse reward: all zeros, or zeros followed by a single terminal 1.
inline bool reward_sequence_valid(const Trajectory& t) {
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const auto& s = t.steps[i];
    if (s.reward != 0.0 && s.reward != 1.0) return false;
    if (s.reward == 1.0 && (i + 1 != t.steps.size() || !s.done)) return false;
    if (s.done && i + 1 != t.steps.size()) return false;
  }
  const bool terminal_one = !t.steps.empty() && t.steps.back().reward == 1.0;
  return terminal_one == t.success;
}

// Keeps exactly the trajectories whose final reward is 1, in input order.
inline std::vector<Trajectory> filter_successful(const std::vector<Trajectory>& trajs) {
  std::vector<Trajectory> out;
  for (const auto& t : trajs)
    if (!t.steps.empty() && t.steps.back().reward == 1.0) out.push_back(t);
  return out;
}

}  // namespace irevla::env
