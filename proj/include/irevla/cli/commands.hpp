#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "irevla/cli/config.hpp"
#include "irevla/pipeline/experiment.hpp"
#include "irevla/split/actor.hpp"

namespace irevla::cli {

namespace fs = std::filesystem;
using pipeline::RunPaths;

// Loads the config and applies IREVLA_RUN_DIR, then snapshots the result
// into the run directory.
inline RunConfig load_run_config(const std::string& path) {
  RunConfig cfg = parse_config(path);
  if (const char* dir = std::getenv("IREVLA_RUN_DIR"); dir && *dir) cfg.output_dir = dir;
  fs::create_directories(cfg.output_dir);
  write_snapshot(cfg, RunPaths{cfg.output_dir}.config());
  return cfg;
}

inline void print_forgetting(std::ostream& out, const pipeline::TrainOutcome& o) {
  using env::Category;
  for (auto c : {Category::Expert, Category::Rl, Category::Holdout})
    out << env::category_name(c) << ": " << o.pi0_report.category_mean(c) << " -> " << o.final_report.category_mean(c)
        << "\n";
  out << "collapses: " << o.result.collapses << "\n";
}

// Baselines and ablations run in a subdirectory that borrows D_e and pi0 from
// the main run directory.
inline RunPaths variant_paths(const RunConfig& cfg, const char* name) {
  RunPaths base{cfg.output_dir};
  RunPaths p{base.dir / name};
  fs::create_directories(p.dir);
  for (auto [src, dst] : {std::pair{base.expert(), p.expert()}, std::pair{base.stage0(), p.stage0()}}) {
    if (!fs::exists(src)) continue;
    fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
  }
  write_snapshot(cfg, p.config());
  return p;
}

inline int cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
  auto ds = pipeline::gen_data(cfg, RunPaths{cfg.output_dir});
  out << "wrote " << ds.size() << " expert trajectories to " << RunPaths{cfg.output_dir}.expert().string() << "\n";
  return 0;
}

inline int cmd_sft(const RunConfig& cfg, std::ostream& out) {
  RunPaths p{cfg.output_dir};
  auto s = pipeline::run_sft(cfg, p);
  auto rep = eval::category_report(s.pi0, pipeline::build_suite(cfg), cfg.eval, cfg.env, "sft", "stage0");
  pipeline::append_reports(p, {rep});
  out << "stage0: " << s.report.epochs_run << " epochs, expert success " << rep.category_mean(env::Category::Expert)
      << ", rl zero-shot " << rep.category_mean(env::Category::Rl) << "\n";
  return 0;
}

inline int cmd_train(const RunConfig& cfg, const RunPaths& p, pipeline::Mode mode, bool resume, std::ostream& out) {
  auto o = pipeline::run_training(cfg, p, mode, resume);
  out << pipeline::mode_name(mode) << " finished in " << p.dir.string() << "\n";
  print_forgetting(out, o);
  return 0;
}

inline int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, std::ostream& out) {
  RunPaths p{cfg.output_dir};
  fs::path ck = checkpoint;
  if (!fs::exists(ck) && fs::exists(p.dir / ck)) ck = p.dir / ck;
  if (!fs::exists(ck)) throw IoError("checkpoint '" + checkpoint + "' not found");
  auto net = model::load_checkpoint(ck);
  auto rep = eval::category_report(net, pipeline::build_suite(cfg), cfg.eval, cfg.env, "eval", ck.filename().string());
  pipeline::append_reports(p, {rep});
  eval::write_report_csv(out, rep);
  return 0;
}

inline int cmd_serve_learner(const RunConfig& cfg, const std::string& bind, std::ostream& out) {
  RunPaths base{cfg.output_dir};
  RunPaths p{base.dir / "learner"};
  auto expert = pipeline::load_expert_data(base);
  auto pi0 = pipeline::load_stage0(base);
  pipeline::EventLog events(p.events());
  pipeline::MetricsWriter metrics(p.metrics(), cfg.wall_clock);
  pipeline::RunContext ctx{&events, &metrics, 0};
  split::Listener listener(split::parse_endpoint(bind));
  out << "listening on port " << listener.port() << std::endl;
  split::LearnerService svc(cfg, pipeline::build_suite(cfg), std::move(expert), pi0, config_digest(cfg), ctx, p);
  svc.serve(listener, cfg.split_timeout_s);
  out << "learner finished after " << svc.counter() << " weight syncs\n";
  return 0;
}

inline int cmd_run_actor(const RunConfig& cfg, const std::string& connect, std::ostream& out) {
  RunPaths p{RunPaths{cfg.output_dir}.dir / "actor"};
  pipeline::EventLog events(p.events());
  pipeline::MetricsWriter metrics(p.metrics(), cfg.wall_clock);
  pipeline::RunContext ctx{&events, &metrics, 0};
  split::ActorOptions opt;
  opt.timeout_s = cfg.split_timeout_s;
  opt.retries = cfg.split_retries;
  split::ActorClient actor(cfg, pipeline::build_suite(cfg), split::parse_endpoint(connect), config_digest(cfg), opt, ctx,
                           p);
  auto res = actor.run();
  if (res.backbone_updates != 0) throw ContractError("actor applied backbone or adapter updates");
  out << "actor finished: " << res.final_counter << " weight syncs, " << res.reconnects << " reconnects\n";
  return 0;
}

// Entry point behind the `irevla` binary. Returns the process exit code:
// 0 on success, 2 on usage errors, 1 on any other failure.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Iterative RL / supervised fine-tuning pipeline for a small vision-language-action policy", "irevla"};
  app.require_subcommand(1);

  std::string config, mode, checkpoint, bind, connect;
  bool resume = false;
  auto add = [&](const char* name, const char* desc) {
    auto* s = app.add_subcommand(name, desc);
    s->add_option("--config", config, "flat section.key = value config file")->required();
    return s;
  };
  auto* gen = add("gen-data", "generate the expert dataset");
  auto* sft = add("sft", "Stage 0: supervised fine-tuning on the expert dataset");
  auto* train = add("train", "run the iterative RL / supervised pipeline");
  train->add_flag("--resume", resume, "continue after the last completed task");
  auto* baseline = add("baseline", "run a baseline");
  baseline->add_option("--mode", mode)->required()->check(CLI::IsMember({"ppo-replay"}));
  auto* ablate = add("ablate", "run an ablation");
  ablate->add_option("--mode", mode)->required()->check(CLI::IsMember({"freeze"}));
  auto* ev = add("eval", "evaluate a checkpoint on every task");
  ev->add_option("--checkpoint", checkpoint)->required();
  auto* learner = add("serve-learner", "serve Stage 2 over TCP");
  learner->add_option("--bind", bind)->required();
  auto* actor = add("run-actor", "run Stage 1 against a learner");
  actor->add_option("--connect", connect)->required();

  if (argc > 1 && argv[1][0] != '-' && !app.get_subcommand_no_throw(argv[1])) {
    err << "error: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    RunConfig cfg = load_run_config(config);
    if (gen->parsed()) return cmd_gen_data(cfg, out);
    if (sft->parsed()) return cmd_sft(cfg, out);
    if (train->parsed()) return cmd_train(cfg, RunPaths{cfg.output_dir}, pipeline::Mode::IReVla, resume, out);
    if (baseline->parsed())
      return cmd_train(cfg, variant_paths(cfg, "ppo_replay"), pipeline::Mode::PpoReplay, false, out);
    if (ablate->parsed()) return cmd_train(cfg, variant_paths(cfg, "irevla_freeze"), pipeline::Mode::Freeze, false, out);
    if (ev->parsed()) return cmd_eval(cfg, checkpoint, out);
    if (learner->parsed()) return cmd_serve_learner(cfg, bind, out);
    if (actor->parsed()) return cmd_run_actor(cfg, connect, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace irevla::cli
