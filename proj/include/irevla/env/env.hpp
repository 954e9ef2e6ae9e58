#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "irevla/core/errors.hpp"
#include "irevla/core/rng.hpp"
#include "irevla/env/task.hpp"

namespace irevla::env {

inline constexpr double kGoalTolerance = 0.05;    // reach / press / pick-place placement
inline constexpr double kGraspRadius = 0.05;      // scaled by the object's shape scale
inline constexpr double kSlideSuccess = 0.15;     // handle displacement needed to count as open
inline constexpr double kSlideTravel = 0.30;      // mechanical limit of the slider
inline constexpr double kSlideGoalOffset = 0.20;  // where the goal marker sits along the slide axis
inline constexpr double kOffsetScale = 0.10;
inline const Box kAgentStart{0.20, 0.80, 0.20, 0.80};

struct EnvState {
  double agent_x = 0, agent_y = 0;
  double gripper = 1.0;  // open fraction; closed when < 0.5
  double obj_x = 0, obj_y = 0;
  double obj_x0 = 0, obj_y0 = 0;  // initial object pose
  double goal_x = 0, goal_y = 0;
  bool grasped = false;
  bool latched = false;
  std::size_t step = 0;
  bool done = false;

  bool gripper_closed() const { return gripper < 0.5; }
  friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct ResetResult {
  EnvState state;
  Tensor obs;
};

struct StepResult {
  EnvState state;
  Tensor obs;
  double reward = 0.0;
  bool done = false;
};

inline std::uint64_t task_hash(const TaskDescriptor& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : t.id) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

// Relative offsets are squashed so that distances of a few steps already
// saturate, matching the scale of the motion commands.
inline double offset_feature(double delta) { return std::tanh(delta / kOffsetScale); }

// Observation: m tokens of width d_in.
//   0: agent x, y, gripper, 1
//   1: object x, y, status (latched/grasped), color one-hot, shape scale,
//      object - agent offset
//   2: goal x, y, goal - agent offset, goal - object offset
//   m-1: instruction embedding
inline Tensor observe(const TaskDescriptor& task, const EnvState& s, const EnvConfig& cfg) {
  if (cfg.d_in < 6 + kNumColors || cfg.tokens < 4)
    throw DimensionError("observation layout needs d_in >= 10 and 4 tokens");
  if (task.instruction.size() != cfg.d_in) throw DimensionError("instruction embedding width != d_in");
  Tensor o({cfg.tokens, cfg.d_in});
  o.at(0, 0) = s.agent_x;
  o.at(0, 1) = s.agent_y;
  o.at(0, 2) = s.gripper;
  o.at(0, 3) = 1.0;
  o.at(1, 0) = s.obj_x;
  o.at(1, 1) = s.obj_y;
  o.at(1, 2) = (s.grasped || s.latched) ? 1.0 : 0.0;
  o.at(1, 3 + static_cast<std::size_t>(task.variation.color)) = 1.0;
  o.at(1, 3 + kNumColors) = task.variation.scale;
  o.at(1, 4 + kNumColors) = offset_feature(s.obj_x - s.agent_x);
  o.at(1, 5 + kNumColors) = offset_feature(s.obj_y - s.agent_y);
  o.at(2, 0) = s.goal_x;
  o.at(2, 1) = s.goal_y;
  o.at(2, 2) = offset_feature(s.goal_x - s.agent_x);
  o.at(2, 3) = offset_feature(s.goal_y - s.agent_y);
  o.at(2, 4) = offset_feature(s.goal_x - s.obj_x);
  o.at(2, 5) = offset_feature(s.goal_y - s.obj_y);
  for (std::size_t k = 0; k < cfg.d_in; ++k) o.at(cfg.tokens - 1, k) = task.instruction[k];
  return o;
}

inline double grasp_radius(const TaskDescriptor& t) { return kGraspRadius * t.variation.scale; }

inline bool success(const TaskDescriptor& t, const EnvState& s) {
  switch (t.family) {
    case Family::Reach: return std::hypot(s.agent_x - s.goal_x, s.agent_y - s.goal_y) <= kGoalTolerance;
    case Family::Press: return s.latched;
    case Family::SlideOpen: return s.obj_x - s.obj_x0 >= kSlideSuccess;
    case Family::PickPlace:
      return s.grasped && std::hypot(s.obj_x - s.goal_x, s.obj_y - s.goal_y) <= kGoalTolerance;
  }
  return false;
}

inline ResetResult reset(const TaskDescriptor& task, std::uint64_t seed, const EnvConfig& cfg = {}) {
  Rng rng(derive_seed(seed, {task_hash(task)}));
  EnvState s;
  s.agent_x = uniform(rng, kAgentStart.x0, kAgentStart.x1);
  s.agent_y = uniform(rng, kAgentStart.y0, kAgentStart.y1);
  const Box& b = task.variation.range;
  s.obj_x0 = s.obj_x = uniform(rng, b.x0, b.x1);
  s.obj_y0 = s.obj_y = uniform(rng, b.y0, b.y1);
  switch (task.family) {
    case Family::Reach:
    case Family::Press:
      s.goal_x = s.obj_x;
      s.goal_y = s.obj_y;
      break;
    case Family::SlideOpen:
      s.goal_x = s.obj_x + kSlideGoalOffset;
      s.goal_y = s.obj_y;
      break;
    case Family::PickPlace:
      do {
        s.goal_x = uniform(rng, b.x0, b.x1);
        s.goal_y = uniform(rng, b.y0, b.y1);
      } while (std::hypot(s.goal_x - s.obj_x, s.goal_y - s.obj_y) < 3 * kGoalTolerance);
      break;
  }
  return {s, observe(task, s, cfg)};
}

// Pure transition function of (task, state, action).
inline StepResult step(const TaskDescriptor& task, const EnvState& prev, std::span<const double> action,
                       const EnvConfig& cfg = {}) {
  if (prev.done) throw ContractError("step called on a finished episode");
  if (action.size() != 3) throw DimensionError("action must have 3 components");
  EnvState s = prev;
  const double dx = std::clamp(action[0], -1.0, 1.0);
  const double dy = std::clamp(action[1], -1.0, 1.0);
  const double grip = std::clamp(action[2], -1.0, 1.0);
  s.agent_x = std::clamp(s.agent_x + dx * cfg.step_size, 0.0, 1.0);
  s.agent_y = std::clamp(s.agent_y + dy * cfg.step_size, 0.0, 1.0);
  s.gripper = 0.5 * (grip + 1.0);

  const double r = grasp_radius(task);
  auto near_object = [&](double radius) { return std::hypot(s.agent_x - s.obj_x, s.agent_y - s.obj_y) <= radius; };
  switch (task.family) {
    case Family::Reach: break;
    case Family::Press:
      if (s.gripper_closed() && near_object(kGoalTolerance)) s.latched = true;
      break;
    case Family::SlideOpen:
      if (!s.gripper_closed()) s.grasped = false;
      else if (!s.grasped && near_object(r)) s.grasped = true;
      if (s.grasped) {
        s.obj_x = std::clamp(s.agent_x, s.obj_x0, s.obj_x0 + kSlideTravel);
        if (!near_object(2.0 * r)) s.grasped = false;
      }
      break;
    case Family::PickPlace:
      if (!s.gripper_closed()) s.grasped = false;
      else if (!s.grasped && near_object(r)) s.grasped = true;
      if (s.grasped) {
        s.obj_x = s.agent_x;
        s.obj_y = s.agent_y;
      }
      break;
  }

  ++s.step;
  StepResult out;
  const bool ok = success(task, s);
  out.reward = ok ? 1.0 : 0.0;
  s.done = ok || s.step >= cfg.horizon;
  out.done = s.done;
  out.state = s;
  out.obs = observe(task, s, cfg);
  return out;
}

inline StepResult step(const TaskDescriptor& task, const EnvState& prev, const Tensor& action, const EnvConfig& cfg = {}) {
  return step(task, prev, action.span(), cfg);
}

}  // namespace irevla::env
