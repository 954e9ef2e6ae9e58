#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "irevla/core/errors.hpp"
#include "irevla/core/rng.hpp"
#include "irevla/env/env.hpp"
#include "irevla/env/trajectory.hpp"

namespace irevla::env {

// Proportional controller through each family's subgoal sequence:
//   reach:       goal
//   press:       button, closing the gripper on arrival
//   slide-open:  handle (close on arrival), then the goal marker along the axis
//   pick-place:  object (close on arrival), then the goal while holding
inline Tensor scripted_expert_action(const TaskDescriptor& task, const EnvState& s, const EnvConfig& cfg = {}) {
  auto toward = [&](double tx, double ty, double& ax, double& ay) {
    ax = std::clamp((tx - s.agent_x) / cfg.step_size, -1.0, 1.0);
    ay = std::clamp((ty - s.agent_y) / cfg.step_size, -1.0, 1.0);
  };
  // Gripper command that closes once the move lands within `radius` of (tx, ty).
  auto close_on_arrival = [&](double tx, double ty, double ax, double ay, double radius) {
    const double nx = s.agent_x + ax * cfg.step_size, ny = s.agent_y + ay * cfg.step_size;
    return std::hypot(nx - tx, ny - ty) <= radius ? -1.0 : 1.0;
  };
  double ax = 0, ay = 0, g = 1.0;
  switch (task.family) {
    case Family::Reach:
      toward(s.goal_x, s.goal_y, ax, ay);
      break;
    case Family::Press:
      toward(s.obj_x, s.obj_y, ax, ay);
      g = close_on_arrival(s.obj_x, s.obj_y, ax, ay, 0.8 * kGoalTolerance);
      break;
    case Family::SlideOpen:
    case Family::PickPlace:
      if (s.grasped) {
        toward(s.goal_x, s.goal_y, ax, ay);
        g = -1.0;
      } else {
        toward(s.obj_x, s.obj_y, ax, ay);
        g = close_on_arrival(s.obj_x, s.obj_y, ax, ay, 0.8 * grasp_radius(task));
      }
      break;
  }
  return Tensor::vector({ax, ay, g});
}

// Runs one episode of `policy(state, obs) -> action` from reset(task, seed).
template <class Policy>
Trajectory run_episode(const TaskDescriptor& task, std::uint64_t seed, Policy&& policy, const EnvConfig& cfg = {}) {
  Trajectory traj;
  traj.task_id = task.id;
  traj.seed = seed;
  auto [state, obs] = reset(task, seed, cfg);
  while (!state.done) {
    Tensor action = policy(state, obs);
    for (auto& a : action.values()) a = std::clamp(a, -1.0, 1.0);
    StepResult r = step(task, state, action, cfg);
    traj.steps.push_back(Transition{std::move(obs), action, r.reward, r.done});
    state = r.state;
    obs = std::move(r.obs);
  }
  traj.success = !traj.steps.empty() && traj.steps.back().reward == 1.0;
  return traj;
}

struct ExpertDataset {
  std::vector<Trajectory> trajectories;

  std::size_t transitions() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.size();
    return n;
  }
};

inline std::uint64_t episode_seed(std::uint64_t base, const TaskDescriptor& task, std::uint64_t index) {
  return derive_seed(base, {task_hash(task), index});
}

// Collects `per_task` successful expert trajectories for every expert task.
inline ExpertDataset generate_expert_dataset(const Suite& suite, std::size_t per_task, std::uint64_t seed,
                                             const EnvConfig& cfg = {}) {
  ExpertDataset ds;
  for (const auto& task : suite.expert) {
    std::size_t got = 0, attempts = 0;
    const std::size_t max_attempts = 10 * per_task;
    while (got < per_task && attempts < max_attempts) {
      auto traj = run_episode(task, episode_seed(seed, task, attempts++),
                              [&](const EnvState& s, const Tensor&) { return scripted_expert_action(task, s, cfg); }, cfg);
      if (traj.success) {
        ds.trajectories.push_back(std::move(traj));
        ++got;
      }
    }
    if (got < per_task)
      throw GenerationError("expert for task '" + task.id + "' reached only " + std::to_string(got) + " of " +
                            std::to_string(per_task) + " successes in " + std::to_string(max_attempts) + " attempts");
  }
  return ds;
}

}  // namespace irevla::env
