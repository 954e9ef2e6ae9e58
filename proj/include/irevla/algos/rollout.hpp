#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "irevla/algos/returns.hpp"
#include "irevla/core/errors.hpp"
#include "irevla/core/rng.hpp"
#include "irevla/env/env.hpp"
#include "irevla/env/trajectory.hpp"
#include "irevla/model/policy_net.hpp"

namespace irevla::algos {

using env::TaskDescriptor;
using env::Trajectory;
using model::ActionMode;
using model::PolicyNet;
using nn::Tensor;

// On-policy batch. Every column has one entry per environment step.
struct RolloutBatch {
  std::vector<Tensor> obs;           // [m x d_in]
  std::vector<Tensor> latent;        // backbone output h [m x d] at collection time
  std::vector<Tensor> actor_latent;  // h'_a at collection time
  std::vector<Tensor> critic_latent; // h'_c at collection time
  std::vector<Tensor> action;        // pre-squash Gaussian sample u [d_a]
  std::vector<double> logprob_old;
  std::vector<double> reward;
  std::vector<bool> done;
  std::vector<double> value;
  double bootstrap_value = 0.0;  // V of the state after the last step when it is not terminal

  std::vector<double> advantage;
  std::vector<double> returns;

  std::size_t size() const { return reward.size(); }

  void check_columns() const {
    const std::size_t n = size();
    if (obs.size() != n || latent.size() != n || actor_latent.size() != n || critic_latent.size() != n ||
        action.size() != n || logprob_old.size() != n || done.size() != n || value.size() != n)
      throw DimensionError("rollout batch columns have different lengths");
    if (!advantage.empty() && (advantage.size() != n || returns.size() != n))
      throw DimensionError("rollout batch advantage columns have different lengths");
  }

  // GAE advantages and lambda-returns, then advantage normalization.
  void prepare(double gamma, double lambda) {
    check_columns();
    std::vector<double> adv = gae_advantages(reward, value, done, gamma, lambda, bootstrap_value);
    returns.resize(adv.size());
    for (std::size_t i = 0; i < adv.size(); ++i) returns[i] = adv[i] + value[i];
    normalize(adv);
    advantage = std::move(adv);
  }

  static void normalize(std::vector<double>& x) {
    if (x.empty()) return;
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(x.size()));
    for (double& v : x) v = (v - mean) / (sd + 1e-8);
  }
};

struct RolloutSpec {
  std::size_t steps = 0;     // exact step budget (bootstrapped at the cut), or
  std::size_t episodes = 0;  // whole episodes
};

struct Rollout {
  std::vector<Trajectory> trajectories;  // completed episodes only
  RolloutBatch batch;
  std::size_t episodes_started = 0;
};

inline std::uint64_t rollout_episode_seed(std::uint64_t seed, const TaskDescriptor& task, std::size_t episode) {
  return derive_seed(seed, {0x726f6c6cULL, env::task_hash(task), episode});
}

// Seeded rollouts of `net` on one task. Stochastic mode samples from the
// Gaussian head (clamped into the action box); deterministic mode executes the
// mean. The net is only read.
inline Rollout collect_rollouts(PolicyNet& net, const TaskDescriptor& task, RolloutSpec spec, std::uint64_t seed,
                                ActionMode mode, const env::EnvConfig& env_cfg = {},
                                model::Squash squash = model::Squash::Clamp) {
  if ((spec.steps == 0) == (spec.episodes == 0))
    throw ContractError("collect_rollouts: give exactly one of a step budget or an episode count");
  Rollout out;
  RolloutBatch& b = out.batch;
  Rng noise(derive_seed(seed, {0x6e6f6973ULL, env::task_hash(task)}));

  auto finished = [&] {
    return spec.steps ? b.size() >= spec.steps : out.trajectories.size() >= spec.episodes;
  };
  while (!finished()) {
    Trajectory traj;
    traj.task_id = task.id;
    traj.seed = rollout_episode_seed(seed, task, out.episodes_started++);
    auto [state, obs] = env::reset(task, traj.seed, env_cfg);
    bool cut = false;
    while (!state.done) {
      if (spec.steps && b.size() >= spec.steps) {
        cut = true;
        break;
      }
      Tensor h = net.encode_batch(obs);
      Tensor ha = net.pool_actor(h);
      Tensor hc = net.pool_critic(h);
      model::ActionSample a = net.sample_action(ha, mode, noise, squash);
      const double v = net.estimate_value(hc);
      env::StepResult r = env::step(task, state, a.action, env_cfg);

      b.obs.push_back(obs);
      b.latent.push_back(std::move(h));
      b.actor_latent.push_back(std::move(ha));
      b.critic_latent.push_back(std::move(hc));
      b.action.push_back(a.pre_squash);
      b.logprob_old.push_back(a.logprob);
      b.reward.push_back(r.reward);
      b.done.push_back(r.done);
      b.value.push_back(v);

      traj.steps.push_back(env::Transition{std::move(obs), a.action, r.reward, r.done});
      state = r.state;
      obs = std::move(r.obs);
    }
    if (cut) {
      b.bootstrap_value = net.estimate_value(net.pool_critic(net.encode_batch(obs)));
      break;
    }
    traj.success = !traj.steps.empty() && traj.steps.back().reward == 1.0;
    out.trajectories.push_back(std::move(traj));
  }
  return out;
}

}  // namespace irevla::algos
