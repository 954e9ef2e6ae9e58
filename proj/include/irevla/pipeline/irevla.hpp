#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "irevla/cli/trajectory_io.hpp"
#include "irevla/model/checkpoint.hpp"
#include "irevla/pipeline/stages.hpp"

namespace irevla::pipeline {

namespace fs = std::filesystem;

enum class Mode : std::uint8_t { IReVla, Freeze, PpoReplay };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::IReVla: return "irevla";
    case Mode::Freeze: return "irevla_freeze";
    case Mode::PpoReplay: return "ppo_replay";
  }
  return "?";
}

struct RunPaths {
  fs::path dir;
  fs::path stage0() const { return dir / "stage0.ckpt"; }
  fs::path stage1(std::size_t i) const { return dir / ("task" + std::to_string(i) + "_stage1.ckpt"); }
  fs::path stage2(std::size_t i) const { return dir / ("task" + std::to_string(i) + "_stage2.ckpt"); }
  fs::path final_ckpt() const { return dir / "final.ckpt"; }
  fs::path d_rl(std::size_t i) const { return dir / "d_rl" / ("task" + std::to_string(i) + ".jsonl"); }
  fs::path expert() const { return dir / "expert.jsonl"; }
  fs::path metrics() const { return dir / "metrics.csv"; }
  fs::path events() const { return dir / "events.log"; }
  fs::path reports() const { return dir / "reports.csv"; }
  fs::path config() const { return dir / "config.resolved"; }
};

// Pipeline bookkeeping. pi0 is never written after construction.
struct PipelineState {
  PolicyNet pi0, pi1, pi2;
  std::vector<std::vector<Trajectory>> d_rl;  // per task, append-only
  std::vector<StageReport> reports;

  explicit PipelineState(const PolicyNet& base) : pi0(base), pi1(base), pi2(base) {}

  std::size_t d_rl_size() const {
    std::size_t n = 0;
    for (const auto& v : d_rl) n += v.size();
    return n;
  }
  std::vector<Trajectory> d_rl_flat() const {
    std::vector<Trajectory> out;
    for (const auto& v : d_rl) out.insert(out.end(), v.begin(), v.end());
    return out;
  }
};

struct PipelineResult {
  PipelineState state;
  std::size_t collapses = 0;
};

struct RunOptions {
  Mode mode = Mode::IReVla;
  std::optional<RunPaths> paths;  // persist checkpoints and D_RL when set
  bool resume = false;
};

inline model::Metadata stage_meta(const std::string& stage, std::size_t task = static_cast<std::size_t>(-1)) {
  model::Metadata m;
  m["stage"] = stage;
  if (task != static_cast<std::size_t>(-1)) m["task_index"] = std::to_string(task);
  return m;
}

inline void copy_event(RunContext& ctx, PolicyNet& dst, const PolicyNet& src, const char* from, const char* to,
                       std::optional<std::size_t> task = {}) {
  dst.copy_weights_from(src);
  std::string line = std::string("COPY src=") + from + " dst=" + to;
  if (task) line += " task=" + std::to_string(*task);
  ctx.event(line);
}

inline std::uint64_t critic_seed(std::uint64_t seed, std::size_t i) { return stage_seed(seed, kTagCritic, i); }
inline std::uint64_t rl_seed(std::uint64_t seed, std::size_t i) { return stage_seed(seed, kTagRl, i); }
inline std::uint64_t sl_seed(std::uint64_t seed, std::size_t i) { return stage_seed(seed, kTagSl, i); }

// Tasks [0, first) already completed in a previous run of the same directory.
inline std::size_t completed_tasks(const RunPaths& p, std::size_t n) {
  std::size_t k = 0;
  while (k < n && fs::exists(p.stage2(k)) && fs::exists(p.d_rl(k))) ++k;
  return k;
}

// One iteration of the loop on task i, split in the two halves
// the actor and learner processes run.
inline Stage1Result irevla_stage1(PipelineState& st, const TaskDescriptor& task, std::size_t i, const RunConfig& cfg,
                                  RunContext& ctx) {
  copy_event(ctx, st.pi1, st.pi2, "pi2", "pi1", i);
  st.pi1.reinit_critic(critic_seed(cfg.seed, i));
  ctx.event("CRITIC_REINIT task=" + std::to_string(i));
  auto r1 = stage1_rl(task, st.pi1, cfg, ctx, rl_seed(cfg.seed, i), model::Stage::Rl1);
  ctx.event("STAGE1 task=" + std::to_string(i) + " id=" + task.id + " engine=" + engine_name(cfg.stage1.engine) +
            " steps=" + std::to_string(r1.report.steps) + " reason=" + convergence_name(r1.report.reason));
  ctx.event("HARVEST task=" + std::to_string(i) + " count=" + std::to_string(r1.harvested.size()) +
            (r1.report.unsolved ? " unsolved=1" : ""));
  return r1;
}

inline Stage2Result irevla_stage2(PipelineState& st, const std::vector<Trajectory>& expert, const std::string& task_id,
                                  std::size_t i, const RunConfig& cfg, RunContext& ctx, Mode mode) {
  copy_event(ctx, st.pi2, st.pi1, "pi1", "pi2", i);
  const auto mask = mode == Mode::Freeze ? model::Stage::Rl1 : model::Stage::Sl2;
  auto r2 = stage2_sl(expert, st.d_rl_flat(), st.pi2, cfg, ctx, sl_seed(cfg.seed, i), task_id, mask);
  ctx.event("STAGE2 task=" + std::to_string(i) + " mask=" + model::stage_name(mask) +
            " epochs=" + std::to_string(r2.report.epochs_run) + " d_rl=" + std::to_string(st.d_rl_size()));
  return r2;
}

// The iterative RL / supervised loop (or the freeze ablation) over the suite's rl tasks, starting
// from a trained pi0. Emits the event trace through ctx.
inline PipelineResult run_irevla(const env::Suite& suite, const std::vector<Trajectory>& expert, const PolicyNet& pi0,
                                 const RunConfig& cfg, RunContext& ctx, const RunOptions& opt = {}) {
  if (opt.mode == Mode::PpoReplay) throw ContractError("run_irevla: use run_ppo_replay for the PPO-Replay baseline");
  PipelineResult res{PipelineState(pi0), 0};
  PipelineState& st = res.state;
  const auto& tasks = suite.rl;
  st.d_rl.assign(tasks.size(), {});

  std::size_t start = 0;
  if (opt.resume && opt.paths) {
    start = completed_tasks(*opt.paths, tasks.size());
    if (start > 0) {
      st.pi2.copy_weights_from(model::load_checkpoint(opt.paths->stage2(start - 1)));
      for (std::size_t k = 0; k < start; ++k) st.d_rl[k] = cli::load_trajectories(opt.paths->d_rl(k));
      ctx.event("RESUME task=" + std::to_string(start));
    }
  }
  if (start == 0) {
    copy_event(ctx, st.pi1, st.pi0, "pi0", "pi1");
    copy_event(ctx, st.pi2, st.pi0, "pi0", "pi2");
  }

  const auto& mc = pi0.config();
  for (std::size_t i = start; i < tasks.size(); ++i) {
    auto r1 = irevla_stage1(st, tasks[i], i, cfg, ctx);
    for (auto& t : r1.harvested) st.d_rl[i].push_back(std::move(t));
    st.reports.push_back(r1.report);
    res.collapses += r1.report.collapses;
    if (opt.paths) {
      model::save_checkpoint(st.pi1, opt.paths->stage1(i), stage_meta("stage1", i));
      cli::save_trajectories(opt.paths->d_rl(i), st.d_rl[i], mc.tokens, mc.d_in, mc.d_a);
    }
    irevla_stage2(st, expert, tasks[i].id, i, cfg, ctx, opt.mode);
    if (opt.paths) model::save_checkpoint(st.pi2, opt.paths->stage2(i), stage_meta("stage2", i));
  }
  if (opt.paths) model::save_checkpoint(st.pi2, opt.paths->final_ckpt(), stage_meta("final"));
  return res;
}

// PPO-Replay: full-model PPO on each task, then a full-model supervised replay
// of the expert data. Divergences are caught inside Stage 1 and counted.
inline PipelineResult run_ppo_replay(const env::Suite& suite, const std::vector<Trajectory>& expert,
                                     const PolicyNet& pi0, const RunConfig& cfg, RunContext& ctx,
                                     const RunOptions& opt = {}) {
  RunConfig c = cfg;
  c.stage1.engine = Engine::Ppo;
  PipelineResult res{PipelineState(pi0), 0};
  PipelineState& st = res.state;
  st.d_rl.assign(suite.rl.size(), {});
  copy_event(ctx, st.pi1, st.pi0, "pi0", "pi1");
  for (std::size_t i = 0; i < suite.rl.size(); ++i) {
    const auto& task = suite.rl[i];
    st.pi1.reinit_critic(critic_seed(c.seed, i));
    ctx.event("CRITIC_REINIT task=" + std::to_string(i));
    auto r1 = stage1_rl(task, st.pi1, c, ctx, rl_seed(c.seed, i), model::Stage::Full);
    ctx.event("STAGE1 task=" + std::to_string(i) + " id=" + task.id + " engine=ppo mask=FULL steps=" +
              std::to_string(r1.report.steps) + " reason=" + convergence_name(r1.report.reason) +
              " collapses=" + std::to_string(r1.report.collapses));
    st.reports.push_back(r1.report);
    res.collapses += r1.report.collapses;
    if (opt.paths) model::save_checkpoint(st.pi1, opt.paths->stage1(i), stage_meta("stage1", i));
    try {
      auto r2 = stage2_sl(expert, {}, st.pi1, c, ctx, sl_seed(c.seed, i), task.id, model::Stage::Full, "REPLAY");
      ctx.event("REPLAY task=" + std::to_string(i) + " epochs=" + std::to_string(r2.report.epochs_run));
    } catch (const DivergenceError& e) {
      ++res.collapses;
      ctx.metric("REPLAY", task.id, "collapse", 1.0);
      ctx.event("COLLAPSE task=" + std::to_string(i) + " stage=REPLAY");
    }
    if (opt.paths) model::save_checkpoint(st.pi1, opt.paths->stage2(i), stage_meta("replay", i));
  }
  st.pi2.copy_weights_from(st.pi1);
  if (opt.paths) model::save_checkpoint(st.pi2, opt.paths->final_ckpt(), stage_meta("final"));
  return res;
}

}  // namespace irevla::pipeline
