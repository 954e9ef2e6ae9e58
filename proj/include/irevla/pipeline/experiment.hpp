#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "irevla/cli/trajectory_io.hpp"
#include "irevla/env/expert.hpp"
#include "irevla/eval/eval.hpp"
#include "irevla/model/checkpoint.hpp"
#include "irevla/pipeline/irevla.hpp"

namespace irevla::pipeline {

inline constexpr std::uint64_t kTagData = 0x64617461;
inline constexpr std::uint64_t kTagModel = 0x6d6f646c;

// Model config with the init seed derived from the run seed.
inline model::ModelConfig resolved_model_config(const RunConfig& cfg) {
  model::ModelConfig mc = cfg.model;
  mc.seed = derive_seed(cfg.seed, {kTagModel});
  mc.d_in = cfg.env.d_in;
  mc.tokens = cfg.env.tokens;
  return mc;
}

inline env::Suite build_suite(const RunConfig& cfg) {
  env::SuiteConfig sc = cfg.suite;
  return env::make_suite(sc, cfg.env);
}

inline std::vector<Trajectory> gen_data(const RunConfig& cfg, const RunPaths& paths) {
  auto suite = build_suite(cfg);
  auto ds = env::generate_expert_dataset(suite, cfg.data_per_task, derive_seed(cfg.seed, {kTagData}), cfg.env);
  cli::save_trajectories(paths.expert(), ds.trajectories, cfg.env.tokens, cfg.env.d_in, cfg.model.d_a);
  return ds.trajectories;
}

inline std::vector<Trajectory> load_expert_data(const RunPaths& paths) {
  if (!std::filesystem::exists(paths.expert()))
    throw IoError("expert dataset '" + paths.expert().string() + "' not found; run `irevla gen-data` first");
  return cli::load_trajectories(paths.expert());
}

inline PolicyNet load_stage0(const RunPaths& paths) {
  if (!std::filesystem::exists(paths.stage0()))
    throw IoError("checkpoint '" + paths.stage0().string() + "' not found; run `irevla sft` first");
  return model::load_checkpoint(paths.stage0());
}

struct SftOutcome {
  PolicyNet pi0;
  SupervisedReport report;
};

// Stage 0 with persisted artifacts: stage0.ckpt, SFT0 metric rows, and the
// STAGE0 line that opens events.log.
inline SftOutcome run_sft(const RunConfig& cfg, const RunPaths& paths) {
  auto expert = load_expert_data(paths);
  EventLog events(paths.events());
  MetricsWriter metrics(paths.metrics(), cfg.wall_clock);
  RunContext ctx{&events, &metrics, 0};
  PolicyNet net(resolved_model_config(cfg));
  auto rep = stage0_sft(expert, net, cfg, ctx);
  model::save_checkpoint(net, paths.stage0(), stage_meta("stage0"));
  char loss[32];
  std::snprintf(loss, sizeof loss, "%.6g", rep.epoch_loss.empty() ? rep.initial_loss : rep.epoch_loss.back());
  ctx.event("STAGE0 epochs=" + std::to_string(rep.epochs_run) + " loss=" + loss);
  return {std::move(net), std::move(rep)};
}

inline void append_reports(const RunPaths& paths, const std::vector<eval::CategoryReport>& reps) {
  const bool fresh = !std::filesystem::exists(paths.reports()) || std::filesystem::file_size(paths.reports()) == 0;
  std::ofstream os(paths.reports(), std::ios::app);
  if (!os) throw IoError("cannot open '" + paths.reports().string() + "'");
  bool header = fresh;
  for (const auto& r : reps) {
    eval::write_report_csv(os, r, header);
    header = false;
  }
}

struct TrainOutcome {
  PipelineResult result;
  eval::CategoryReport pi0_report;
  eval::CategoryReport final_report;
  eval::ForgettingDelta forgetting;
};

// train / ablate / baseline: loads pi0 and D_e from the run directory, runs
// the requested pipeline, evaluates pi0 and the final policy on every task.
inline TrainOutcome run_training(const RunConfig& cfg, const RunPaths& paths, Mode mode, bool resume = false) {
  auto suite = build_suite(cfg);
  auto expert = load_expert_data(paths);
  PolicyNet pi0 = load_stage0(paths);
  EventLog events(paths.events(), true);
  MetricsWriter metrics(paths.metrics(), cfg.wall_clock);
  RunContext ctx{&events, &metrics, 0};
  RunOptions opt{mode, paths, resume};
  PipelineResult res = mode == Mode::PpoReplay ? run_ppo_replay(suite, expert, pi0, cfg, ctx, opt)
                                               : run_irevla(suite, expert, pi0, cfg, ctx, opt);
  const std::string run_id = mode_name(mode);
  auto rep0 = eval::category_report(res.state.pi0, suite, cfg.eval, cfg.env, run_id, "stage0");
  auto rep1 = eval::category_report(res.state.pi2, suite, cfg.eval, cfg.env, run_id, "final");
  append_reports(paths, {rep0, rep1});
  for (auto c : {env::Category::Expert, env::Category::Rl, env::Category::Holdout}) {
    metrics.emit(ctx.env_steps, "EVAL", std::string("pi0:") + env::category_name(c), "mean_success", rep0.category_mean(c));
    metrics.emit(ctx.env_steps, "EVAL", std::string("final:") + env::category_name(c), "mean_success", rep1.category_mean(c));
  }
  metrics.emit(ctx.env_steps, "EVAL", "", "collapses", static_cast<double>(res.collapses));
  auto delta = eval::forgetting_delta(rep0, rep1);
  return {std::move(res), std::move(rep0), std::move(rep1), std::move(delta)};
}

}  // namespace irevla::pipeline
