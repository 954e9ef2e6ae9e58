#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "irevla/algos/latent_cache.hpp"
#include "irevla/algos/ppo.hpp"
#include "irevla/algos/sacfd.hpp"
#include "irevla/env/expert.hpp"
#include "irevla/eval/eval.hpp"
#include "irevla/model/freeze.hpp"
#include "irevla/pipeline/config.hpp"
#include "irevla/pipeline/run_log.hpp"
#include "irevla/pipeline/supervised.hpp"

namespace irevla::pipeline {

using env::TaskDescriptor;
using env::Trajectory;

// Shared sinks for one run. Both pointers may be null.
struct RunContext {
  EventLog* events = nullptr;
  MetricsWriter* metrics = nullptr;
  std::size_t env_steps = 0;  // cumulative environment steps spent on training

  void event(const std::string& line) {
    if (events) events->emit(line);
  }
  void metric(const std::string& stage, const std::string& task, const std::string& name, double value) {
    if (metrics) metrics->emit(env_steps, stage, task, name, value);
  }
};

enum class Convergence : std::uint8_t { Threshold, Budget };

inline const char* convergence_name(Convergence c) { return c == Convergence::Threshold ? "threshold" : "budget"; }

struct StageReport {
  std::string task_id;
  std::string stage;
  std::size_t steps = 0;
  Convergence reason = Convergence::Budget;
  std::vector<double> success_trace;  // deterministic eval success before each update round
  std::size_t harvested = 0;
  bool unsolved = false;              // nothing harvested
  std::uint64_t backbone_updates = 0; // tensor updates applied to base or adapter parameters
  std::size_t collapses = 0;          // recovered divergence events
};

inline std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  return derive_seed(seed, {tag, index});
}

inline constexpr std::uint64_t kTagSft = 0x736674;
inline constexpr std::uint64_t kTagRl = 0x726c31;
inline constexpr std::uint64_t kTagEval = 0x65766c31;
inline constexpr std::uint64_t kTagHarvest = 0x68727673;
inline constexpr std::uint64_t kTagCritic = 0x63726974;
inline constexpr std::uint64_t kTagSl = 0x736c32;

// ------------------------------------------------------------------ stage 0

inline SupervisedReport stage0_sft(const std::vector<Trajectory>& expert, PolicyNet& net, const RunConfig& cfg,
                                   RunContext& ctx) {
  if (expert.empty()) throw ContractError("stage0_sft: the expert dataset is empty");
  model::apply_stage_freeze(net, model::Stage::Sft0);
  SampleSet set;
  set.add_all(expert);
  auto rep = train_supervised(net, set, cfg.sft, stage_seed(cfg.seed, kTagSft, 0),
                              [&](std::size_t, double loss) { ctx.metric("SFT0", "", "loss", loss); });
  return rep;
}

// ------------------------------------------------------------------ stage 1

// Up to `cap` successful trajectories of the deterministic policy.
inline std::vector<Trajectory> harvest_successes(PolicyNet& net, const TaskDescriptor& task, std::size_t cap,
                                                 std::size_t max_attempts, std::uint64_t seed,
                                                 const env::EnvConfig& env_cfg,
                                                 model::Squash squash = model::Squash::Clamp) {
  std::vector<Trajectory> out;
  auto policy = eval::deterministic_policy(net, squash);
  for (std::size_t k = 0; k < max_attempts && out.size() < cap; ++k) {
    auto tr = env::run_episode(task, derive_seed(seed, {env::task_hash(task), k}), policy, env_cfg);
    if (tr.success) out.push_back(std::move(tr));
  }
  return out;
}

struct Stage1Result {
  StageReport report;
  std::vector<Trajectory> harvested;
};

namespace detail {

inline void ppo_engine(const TaskDescriptor& task, PolicyNet& net, const RunConfig& cfg, RunContext& ctx,
                       std::uint64_t seed, StageReport& rep, const char* stage) {
  const auto& s1 = cfg.stage1;
  nn::Adam opt = algos::make_ppo_optimizer(net, cfg.ppo);
  const std::uint64_t eval_seed = derive_seed(seed, {kTagEval});
  for (std::size_t round = 0;; ++round) {
    const double rate = eval::eval_success_rate(net, task, s1.eval_episodes, eval_seed, cfg.env);
    rep.success_trace.push_back(rate);
    ctx.metric(stage, task.id, "success_rate", rate);
    if (rate >= s1.target) {
      rep.reason = Convergence::Threshold;
      break;
    }
    if (rep.steps >= s1.step_budget) {
      rep.reason = Convergence::Budget;
      break;
    }
    const std::size_t n = std::min(cfg.ppo.rollout_steps, s1.step_budget - rep.steps);
    auto ro = algos::collect_rollouts(net, task, {n, 0}, derive_seed(seed, {round}), model::ActionMode::Stochastic, cfg.env);
    rep.steps += ro.batch.size();
    ctx.env_steps += ro.batch.size();
    std::size_t ok = 0;
    for (const auto& t : ro.trajectories) ok += t.success;
    ctx.metric(stage, task.id, "rollout_success",
               ro.trajectories.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(ro.trajectories.size()));

    PolicyNet snapshot = net;
    auto backbone_steps = [&] { return opt.updates(nn::Group::Base) + opt.updates(nn::Group::Lora); };
    const std::uint64_t steps_before = backbone_steps();
    try {
      auto d = algos::ppo_update(ro.batch, net, cfg.ppo, opt, derive_seed(seed, {round, 1}));
      ctx.metric(stage, task.id, "policy_loss", d.policy_loss);
      ctx.metric(stage, task.id, "value_loss", d.value_loss);
      ctx.metric(stage, task.id, "entropy", d.entropy);
      ctx.metric(stage, task.id, "clip_frac", d.clip_frac);
      ctx.metric(stage, task.id, "mean_ratio", d.mean_ratio);
      rep.backbone_updates += backbone_steps() - steps_before;
    } catch (const DivergenceError& e) {
      rep.backbone_updates += backbone_steps() - steps_before;
      net.copy_weights_from(snapshot);
      opt = algos::make_ppo_optimizer(net, cfg.ppo);
      ++rep.collapses;
      ctx.metric(stage, task.id, "collapse", static_cast<double>(rep.collapses));
      ctx.event(std::string("COLLAPSE task=") + task.id + " round=" + std::to_string(round));
    }
  }
}

inline void sacfd_engine(const TaskDescriptor& task, PolicyNet& net, const RunConfig& cfg, RunContext& ctx,
                         std::uint64_t seed, StageReport& rep, const char* stage) {
  const auto& s1 = cfg.stage1;
  const auto squash = model::Squash::Tanh;
  algos::LatentCache cache;
  algos::SacfdLearner learner(net, cfg.sac, seed);
  algos::DemoBuffer demo(cfg.sac.replay_capacity);
  algos::ReplayBuffer online(cfg.sac.replay_capacity);

  auto latent_trace = [&](const Trajectory& tr) {
    std::vector<algos::LatentTransition> out;
    auto [state, obs] = env::reset(task, tr.seed, cfg.env);
    for (const auto& s : tr.steps) {
      auto next = env::step(task, state, s.action, cfg.env);
      out.push_back({algos::encode_and_cache_latent(s.obs, net, cache).latent, s.action, s.reward,
                     algos::encode_and_cache_latent(next.obs, net, cache).latent, s.done});
      state = next.state;
    }
    return out;
  };
  // Demonstrations: successes of the zero-shot policy as it stands.
  const auto demos = harvest_successes(net, task, cfg.sac.demo_trajectories,
                                       cfg.sac.demo_trajectories * s1.harvest_attempt_factor,
                                       derive_seed(seed, {0x64656d6fULL}), cfg.env);
  for (const auto& d : demos) demo.add_successful_episode(latent_trace(d));
  ctx.metric(stage, task.id, "demo_trajectories", static_cast<double>(demos.size()));

  Rng rng(derive_seed(seed, {0x736163ULL}));
  const std::uint64_t eval_seed = derive_seed(seed, {kTagEval});
  std::size_t episode = 0;
  env::EnvState state;
  Tensor obs;
  bool need_reset = true;
  for (;;) {
    if (rep.steps % s1.sac_eval_interval == 0) {
      const double rate = eval::eval_success_rate(net, task, s1.eval_episodes, eval_seed, cfg.env, squash);
      rep.success_trace.push_back(rate);
      ctx.metric(stage, task.id, "success_rate", rate);
      if (rate >= s1.target) {
        rep.reason = Convergence::Threshold;
        break;
      }
      if (rep.steps >= s1.step_budget) {
        rep.reason = Convergence::Budget;
        break;
      }
    }
    if (need_reset) {
      auto r = env::reset(task, algos::rollout_episode_seed(seed, task, episode++), cfg.env);
      state = r.state;
      obs = std::move(r.obs);
      need_reset = false;
    }
    auto lat = algos::encode_and_cache_latent(obs, net, cache);
    auto a = net.sample_action(lat.actor_pooled, model::ActionMode::Stochastic, rng, squash);
    auto r = env::step(task, state, a.action, cfg.env);
    online.push({lat.latent, a.action, r.reward, algos::encode_and_cache_latent(r.obs, net, cache).latent, r.done});
    state = r.state;
    obs = std::move(r.obs);
    need_reset = r.done;
    ++rep.steps;
    ++ctx.env_steps;
    if (!demo.empty() && online.size() >= s1.sac_warmup) {
      auto d = learner.update(online, demo, net, rng);
      if (rep.steps % s1.sac_eval_interval == 0) {
        ctx.metric(stage, task.id, "critic_loss", d.critic_loss);
        ctx.metric(stage, task.id, "actor_loss", d.actor_loss);
        ctx.metric(stage, task.id, "alpha", d.alpha);
        ctx.metric(stage, task.id, "q1", d.q1);
        ctx.metric(stage, task.id, "q2", d.q2);
      }
    }
  }
  rep.backbone_updates = learner.actor_backbone_updates();
  ctx.metric(stage, task.id, "cache_hits", static_cast<double>(cache.hits()));
  ctx.metric(stage, task.id, "cache_misses", static_cast<double>(cache.misses()));
}

}  // namespace detail

// Stage 1 on one task with the trainability given by `mask` (RL1 for iRe-VLA
// and the freeze ablation, FULL for the PPO-Replay baseline). The critic must
// already be re-initialized by the caller.
inline Stage1Result stage1_rl(const TaskDescriptor& task, PolicyNet& net, const RunConfig& cfg, RunContext& ctx,
                              std::uint64_t seed, model::Stage mask = model::Stage::Rl1) {
  model::apply_stage_freeze(net, mask);
  Stage1Result res;
  res.report.task_id = task.id;
  res.report.stage = model::stage_name(mask);
  const char* stage = model::stage_name(mask);
  model::Squash squash = model::Squash::Clamp;
  if (cfg.stage1.engine == Engine::Ppo) {
    detail::ppo_engine(task, net, cfg, ctx, seed, res.report, stage);
  } else {
    if (mask != model::Stage::Rl1) throw ContractError("the SACfD engine runs only on a frozen backbone");
    detail::sacfd_engine(task, net, cfg, ctx, seed, res.report, stage);
    squash = model::Squash::Tanh;
  }
  const auto& s1 = cfg.stage1;
  res.harvested = harvest_successes(net, task, s1.harvest_cap, s1.harvest_cap * s1.harvest_attempt_factor,
                                    derive_seed(seed, {kTagHarvest}), cfg.env, squash);
  res.report.harvested = res.harvested.size();
  res.report.unsolved = res.harvested.empty();
  ctx.metric(stage, task.id, "harvested", static_cast<double>(res.harvested.size()));
  return res;
}

// ------------------------------------------------------------------ stage 2

struct Stage2Result {
  SupervisedReport report;
};

// Supervised pass over D_e plus D_RL with task-balanced sampling. `mask` is
// SL2 for iRe-VLA, RL1 for the freeze ablation and FULL for PPO-Replay's
// replay. On divergence the network is restored to its state on entry and the
// error propagates.
inline Stage2Result stage2_sl(const std::vector<Trajectory>& expert, const std::vector<Trajectory>& online,
                              PolicyNet& net, const RunConfig& cfg, RunContext& ctx, std::uint64_t seed,
                              const std::string& task_id, model::Stage mask = model::Stage::Sl2,
                              const char* stage_label = nullptr) {
  model::apply_stage_freeze(net, mask);
  if (cfg.stage2.lora_reset && mask == model::Stage::Sl2) net.reset_adapters();
  SampleSet set;
  set.add_all(expert);
  set.add_all(online);
  const std::string label = stage_label ? stage_label : "SL2";
  PolicyNet entry = net;
  Stage2Result res;
  try {
    res.report = train_supervised(net, set, cfg.stage2.sl, seed,
                                  [&](std::size_t, double loss) { ctx.metric(label, task_id, "loss", loss); });
  } catch (const DivergenceError&) {
    net.copy_weights_from(entry);
    throw;
  }
  return res;
}

}  // namespace irevla::pipeline
