#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "irevla/pipeline/experiment.hpp"
#include "support.hpp"

using namespace irevla;
using namespace irevla::pipeline;
using model::Stage;

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::vector<std::string> out;
  std::ifstream in(p);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// gen-data, sft and one pipeline run in a fresh directory.
TrainOutcome full_run(const RunConfig& cfg, const RunPaths& p, Mode mode = Mode::IReVla) {
  gen_data(cfg, p);
  run_sft(cfg, p);
  return run_training(cfg, p, mode);
}

class TinyRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    cfg_ = new RunConfig(fixtures::tiny_config());
    paths_ = new RunPaths{fixtures::scratch_dir("pipeline_tiny")};
    cfg_->output_dir = paths_->dir.string();
    outcome_ = new TrainOutcome(full_run(*cfg_, *paths_));
  }
  static void TearDownTestSuite() {
    delete outcome_;
    delete paths_;
    delete cfg_;
  }
  static RunConfig* cfg_;
  static RunPaths* paths_;
  static TrainOutcome* outcome_;
};

RunConfig* TinyRun::cfg_ = nullptr;
RunPaths* TinyRun::paths_ = nullptr;
TrainOutcome* TinyRun::outcome_ = nullptr;

}  // namespace

// ---------------------------------------------------------------- supervised stages

TEST(Stage0, OneEpochLowersTheObjective) {
  RunConfig cfg;
  cfg.model.d = 16;
  cfg.model.hidden = 16;
  cfg.sft.epochs = 1;
  auto suite = build_suite(cfg);
  auto ds = env::generate_expert_dataset(suite, 5, 1, cfg.env);
  PolicyNet net(resolved_model_config(cfg));
  SampleSet set;
  set.add_all(ds.trajectories);
  RunContext ctx;
  auto rep = stage0_sft(ds.trajectories, net, cfg, ctx);
  EXPECT_EQ(rep.epochs_run, 1u);
  EXPECT_LT(supervised_objective(net, set, false), rep.initial_loss);
}

TEST(Stage0, MemorizesATinyDataset) {
  RunConfig cfg;
  cfg.model.blocks = 1;
  cfg.sft = SupervisedConfig{1000, 16, 3e-3, 1000, 1e-3, model::Squash::Clamp, true};
  auto suite = build_suite(cfg);
  auto ds = env::generate_expert_dataset(suite, 5, 2, cfg.env);
  std::vector<Trajectory> five;
  for (const auto& t : ds.trajectories)
    if (t.task_id == suite.expert[0].id) five.push_back(t);
  ASSERT_EQ(five.size(), 5u);
  PolicyNet net(resolved_model_config(cfg));
  RunContext ctx;
  stage0_sft(five, net, cfg, ctx);
  SampleSet set;
  set.add_all(five);
  EXPECT_LT(supervised_objective(net, set, false), 1e-3);
}

TEST(Stage0, EmptyDatasetIsRejected) {
  RunConfig cfg;
  PolicyNet net(resolved_model_config(cfg));
  RunContext ctx;
  EXPECT_THROW(stage0_sft({}, net, cfg, ctx), ContractError);
}

TEST(Stage2, BalancedEpochGivesEveryTaskTheSameQuota) {
  RunConfig cfg;
  auto suite = build_suite(cfg);
  auto ds = env::generate_expert_dataset(suite, 3, 4, cfg.env);
  std::vector<Trajectory> data = ds.trajectories;
  // one small online task next to six expert tasks
  data.push_back(ds.trajectories.front());
  data.back().task_id = "online-task";
  SampleSet set;
  set.add_all(data);
  Rng rng(1);
  for (int rep = 0; rep < 3; ++rep) {
    auto epoch = balanced_epoch(set, rng);
    std::map<const nn::Tensor*, std::size_t> seen;
    std::map<std::string, std::size_t> per_task;
    for (const auto& s : epoch) ++seen[s.obs];
    for (const auto& [id, samples] : set.by_task()) {
      std::size_t lo = SIZE_MAX, hi = 0;
      for (const auto& s : samples) {
        per_task[id] += seen[s.obs];
        lo = std::min(lo, seen[s.obs]);
        hi = std::max(hi, seen[s.obs]);
      }
      EXPECT_LE(hi - lo, 1u) << id;
    }
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& [id, n] : per_task) {
      lo = std::min(lo, n);
      hi = std::max(hi, n);
    }
    EXPECT_LE(hi - lo, 1u);
    EXPECT_EQ(per_task.size(), 7u);
  }
}

TEST(Stage2, EmptyOnlineDataReducesToSupervisedFineTuningUnderTheSl2Mask) {
  RunConfig cfg = fixtures::tiny_config();
  cfg.stage2.sl.epochs = 2;
  auto suite = build_suite(cfg);
  auto expert = env::generate_expert_dataset(suite, 3, 5, cfg.env).trajectories;
  PolicyNet a(resolved_model_config(cfg));
  PolicyNet b = a;
  RunContext ctx;
  stage2_sl(expert, {}, a, cfg, ctx, 77, "t");

  model::apply_stage_freeze(b, Stage::Sl2);
  SampleSet set;
  set.add_all(expert);
  train_supervised(b, set, cfg.stage2.sl, 77);
  EXPECT_EQ(a.params().digest(), b.params().digest());
}

TEST(Stage2, DivergenceRestoresTheEntryWeights) {
  RunConfig cfg = fixtures::tiny_config();
  auto suite = build_suite(cfg);
  auto expert = env::generate_expert_dataset(suite, 2, 5, cfg.env).trajectories;
  for (auto& t : expert)
    for (auto& s : t.steps) s.action[0] = std::numeric_limits<double>::quiet_NaN();
  PolicyNet net(resolved_model_config(cfg));
  const auto before = net.params().digest();
  RunContext ctx;
  EXPECT_THROW(stage2_sl(expert, {}, net, cfg, ctx, 1, "t"), DivergenceError);
  EXPECT_EQ(net.params().digest(), before);
}

TEST(Stage2, LoraResetZeroesAdaptersFirst) {
  RunConfig cfg = fixtures::tiny_config();
  cfg.stage2.lora_reset = true;
  cfg.stage2.sl.epochs = 0;
  auto suite = build_suite(cfg);
  auto expert = env::generate_expert_dataset(suite, 2, 5, cfg.env).trajectories;
  PolicyNet net(resolved_model_config(cfg));
  for (auto& p : net.params())
    if (p.id.ends_with(".lora_B")) p.value.values().assign(p.value.size(), 0.3);
  RunContext ctx;
  stage2_sl(expert, {}, net, cfg, ctx, 1, "t");
  for (const auto& p : net.params())
    if (p.id.ends_with(".lora_B"))
      for (double v : p.value.values()) EXPECT_EQ(v, 0.0) << p.id;
}

TEST(Stage1, FrozenBackboneAndSuccessfulHarvestWithinCap) {
  RunConfig cfg = fixtures::tiny_config();
  auto suite = build_suite(cfg);
  PolicyNet net(resolved_model_config(cfg));
  const auto backbone = net.backbone_digest();
  RunContext ctx;
  auto r = stage1_rl(suite.expert[0], net, cfg, ctx, 9);
  EXPECT_EQ(net.backbone_digest(), backbone);
  EXPECT_EQ(r.report.backbone_updates, 0u);
  EXPECT_LE(r.harvested.size(), cfg.stage1.harvest_cap);
  EXPECT_EQ(r.report.harvested, r.harvested.size());
  EXPECT_GT(r.report.steps, 0u);
  EXPECT_FALSE(r.report.success_trace.empty());
  for (const auto& t : r.harvested) {
    EXPECT_TRUE(t.success);
    EXPECT_TRUE(env::reward_sequence_valid(t));
  }
  if (r.report.reason == Convergence::Threshold) {
    EXPECT_GE(r.report.success_trace.back(), cfg.stage1.target);
  } else {
    EXPECT_GE(r.report.steps, cfg.stage1.step_budget);
  }
}

TEST(Stage1, SacfdEngineKeepsTheBackboneFrozen) {
  RunConfig cfg = fixtures::tiny_config();
  cfg.stage1.engine = Engine::Sacfd;
  cfg.stage1.step_budget = 300;
  cfg.stage1.sac_eval_interval = 100;
  cfg.stage1.sac_warmup = 32;
  cfg.sac.batch = 16;
  cfg.sac.demo_trajectories = 2;
  cfg.sac.hidden = 16;
  auto suite = build_suite(cfg);
  PolicyNet net(resolved_model_config(cfg));
  const auto backbone = net.backbone_digest();
  RunContext ctx;
  auto r = stage1_rl(suite.expert[0], net, cfg, ctx, 9);
  EXPECT_EQ(net.backbone_digest(), backbone);
  EXPECT_EQ(r.report.backbone_updates, 0u);
  for (const auto& t : r.harvested) EXPECT_TRUE(t.success);
  EXPECT_THROW(stage1_rl(suite.expert[0], net, cfg, ctx, 9, Stage::Full), ContractError);
}

TEST(Stage1, BackboneCounterSeesFullMaskUpdates) {
  RunConfig cfg = fixtures::tiny_config();
  cfg.stage1.step_budget = 256;
  auto suite = build_suite(cfg);
  PolicyNet net(resolved_model_config(cfg));
  RunContext ctx;
  auto r = stage1_rl(suite.expert[0], net, cfg, ctx, 9, Stage::Full);
  EXPECT_GT(r.report.backbone_updates, 0u);
}

// ---------------------------------------------------------------- pipeline run

TEST_F(TinyRun, EventTraceFollowsTheIterationPattern) {
  auto lines = lines_of(paths_->events());
  const std::size_t n = build_suite(*cfg_).rl.size();
  ASSERT_EQ(lines.size(), 3 + 6 * n);
  EXPECT_TRUE(std::regex_match(lines[0], std::regex(R"(STAGE0 epochs=\d+ loss=\S+)"))) << lines[0];
  EXPECT_EQ(lines[1], "COPY src=pi0 dst=pi1");
  EXPECT_EQ(lines[2], "COPY src=pi0 dst=pi2");
  for (std::size_t i = 0; i < n; ++i) {
    const std::string k = std::to_string(i);
    const auto* l = &lines[3 + 6 * i];
    EXPECT_EQ(l[0], "COPY src=pi2 dst=pi1 task=" + k);
    EXPECT_EQ(l[1], "CRITIC_REINIT task=" + k);
    EXPECT_TRUE(std::regex_match(l[2], std::regex("STAGE1 task=" + k + R"( id=\S+ engine=ppo steps=\d+ reason=(threshold|budget))")))
        << l[2];
    EXPECT_TRUE(std::regex_match(l[3], std::regex("HARVEST task=" + k + R"( count=\d+( unsolved=1)?)"))) << l[3];
    EXPECT_EQ(l[4], "COPY src=pi1 dst=pi2 task=" + k);
    EXPECT_TRUE(std::regex_match(l[5], std::regex("STAGE2 task=" + k + R"( mask=SL2 epochs=\d+ d_rl=\d+)"))) << l[5];
  }
}

TEST_F(TinyRun, OnlineDatasetIsPureAndGrows) {
  const auto& st = outcome_->result.state;
  std::size_t total = 0;
  auto lines = lines_of(paths_->events());
  std::vector<std::size_t> sizes;
  for (const auto& l : lines) {
    std::smatch m;
    if (std::regex_search(l, m, std::regex(R"(^STAGE2 .* d_rl=(\d+))"))) sizes.push_back(std::stoul(m[1]));
  }
  for (std::size_t i = 1; i < sizes.size(); ++i) EXPECT_GE(sizes[i], sizes[i - 1]);
  for (std::size_t i = 0; i < st.d_rl.size(); ++i) {
    auto disk = cli::load_trajectories(paths_->d_rl(i));
    EXPECT_EQ(disk.size(), st.d_rl[i].size());
    for (const auto& t : disk) {
      EXPECT_EQ(t.steps.back().reward, 1.0);
      EXPECT_TRUE(env::reward_sequence_valid(t));
    }
    total += disk.size();
  }
  ASSERT_FALSE(sizes.empty());
  EXPECT_EQ(sizes.back(), total);
}

TEST_F(TinyRun, FreezeDisciplineAcrossCheckpoints) {
  const auto pi0 = model::load_checkpoint(paths_->stage0());
  std::uint64_t lora_before_stage1 = pi0.lora_digest();
  for (std::size_t i = 0; i < build_suite(*cfg_).rl.size(); ++i) {
    auto s1 = model::load_checkpoint(paths_->stage1(i));
    auto s2 = model::load_checkpoint(paths_->stage2(i));
    EXPECT_EQ(s1.base_digest(), pi0.base_digest());
    EXPECT_EQ(s2.base_digest(), pi0.base_digest());
    EXPECT_EQ(s1.lora_digest(), lora_before_stage1) << "task " << i;
    lora_before_stage1 = s2.lora_digest();
  }
  EXPECT_EQ(outcome_->result.state.pi0.params().digest(), pi0.params().digest());
  EXPECT_EQ(model::load_checkpoint(paths_->final_ckpt()).params().digest(),
            outcome_->result.state.pi2.params().digest());
}

TEST_F(TinyRun, ReportsCoverEveryTaskTwice) {
  auto lines = lines_of(paths_->reports());
  ASSERT_FALSE(lines.empty());
  EXPECT_EQ(lines[0], eval::kReportHeader);
  EXPECT_EQ(lines.size(), 1 + 2 * build_suite(*cfg_).all().size());
}

TEST_F(TinyRun, SameSeedReproducesEveryArtifact) {
  RunConfig c = *cfg_;
  RunPaths p{fixtures::scratch_dir("pipeline_tiny_again")};
  c.output_dir = p.dir.string();
  full_run(c, p);
  EXPECT_EQ(slurp(p.final_ckpt()), slurp(paths_->final_ckpt()));
  EXPECT_EQ(slurp(p.metrics()), slurp(paths_->metrics()));
  EXPECT_EQ(slurp(p.events()), slurp(paths_->events()));
  EXPECT_EQ(slurp(p.d_rl(0)), slurp(paths_->d_rl(0)));
}

TEST_F(TinyRun, ResumeAfterInterruptionMatchesTheUninterruptedRun) {
  RunConfig c = *cfg_;
  RunPaths p{fixtures::scratch_dir("pipeline_tiny_resume")};
  c.output_dir = p.dir.string();
  for (const auto& f : {paths_->expert(), paths_->stage0(), paths_->stage1(0), paths_->stage2(0)})
    fs::copy_file(f, p.dir / f.filename());
  fs::create_directories(p.d_rl(0).parent_path());
  fs::copy_file(paths_->d_rl(0), p.d_rl(0));
  ASSERT_EQ(completed_tasks(p, 2), 1u);
  run_training(c, p, Mode::IReVla, true);
  EXPECT_EQ(slurp(p.final_ckpt()), slurp(paths_->final_ckpt()));
  auto ev = lines_of(p.events());
  ASSERT_FALSE(ev.empty());
  EXPECT_EQ(ev[0], "RESUME task=1");
  EXPECT_EQ(ev[1], "COPY src=pi2 dst=pi1 task=1");
}

TEST(Pipeline, NoRlTasksLeavesPi2EqualToPi0) {
  RunConfig cfg = fixtures::tiny_config();
  auto suite = build_suite(cfg);
  suite.rl.clear();
  auto expert = env::generate_expert_dataset(suite, 2, 5, cfg.env).trajectories;
  PolicyNet pi0(resolved_model_config(cfg));
  EventLog events;
  RunContext ctx{&events, nullptr, 0};
  auto res = run_irevla(suite, expert, pi0, cfg, ctx);
  EXPECT_EQ(res.state.pi2.params().digest(), pi0.params().digest());
  EXPECT_EQ(events.events(), (std::vector<std::string>{"COPY", "COPY"}));
}

TEST(Pipeline, UnsolvedTaskIsFlaggedAndTheRunContinues) {
  RunConfig cfg = fixtures::tiny_config();
  auto suite = build_suite(cfg);
  auto expert = env::generate_expert_dataset(suite, 2, 5, cfg.env).trajectories;
  cfg.env.horizon = 1;  // nothing can be solved in a single step
  PolicyNet pi0(resolved_model_config(cfg));
  EventLog events;
  RunContext ctx{&events, nullptr, 0};
  auto res = run_irevla(suite, expert, pi0, cfg, ctx);
  ASSERT_EQ(res.state.reports.size(), suite.rl.size());
  for (const auto& r : res.state.reports) {
    EXPECT_TRUE(r.unsolved);
    EXPECT_EQ(r.reason, Convergence::Budget);
  }
  EXPECT_EQ(res.state.d_rl_size(), 0u);
  std::size_t stage2 = 0, unsolved = 0;
  for (const auto& l : events.lines()) {
    stage2 += l.starts_with("STAGE2 ");
    unsolved += l.find("unsolved=1") != std::string::npos;
  }
  EXPECT_EQ(stage2, suite.rl.size());
  EXPECT_EQ(unsolved, suite.rl.size());
}

TEST(Pipeline, FreezeAblationNeverTouchesTheAdapters) {
  RunConfig cfg = fixtures::tiny_config();
  RunPaths p{fixtures::scratch_dir("pipeline_freeze")};
  cfg.output_dir = p.dir.string();
  auto out = full_run(cfg, p, Mode::Freeze);
  const auto pi0 = model::load_checkpoint(p.stage0());
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(model::load_checkpoint(p.stage1(i)).lora_digest(), pi0.lora_digest());
    EXPECT_EQ(model::load_checkpoint(p.stage2(i)).lora_digest(), pi0.lora_digest());
  }
  EXPECT_EQ(out.result.state.pi2.backbone_digest(), pi0.backbone_digest());
  for (const auto& l : lines_of(p.events()))
    if (l.starts_with("STAGE2 ")) EXPECT_NE(l.find("mask=RL1"), std::string::npos) << l;
}

TEST(Pipeline, PpoReplayFineTunesTheWholeModel) {
  RunConfig cfg = fixtures::tiny_config();
  RunPaths p{fixtures::scratch_dir("pipeline_replay")};
  cfg.output_dir = p.dir.string();
  auto out = full_run(cfg, p, Mode::PpoReplay);
  const auto pi0 = model::load_checkpoint(p.stage0());
  EXPECT_NE(model::load_checkpoint(p.stage1(0)).base_digest(), pi0.base_digest());
  EXPECT_EQ(out.final_report.rows.size(), out.pi0_report.rows.size());
  EXPECT_EQ(out.final_report.rows.size(), build_suite(cfg).all().size());
  EXPECT_THROW(
      {
        RunContext ctx;
        run_irevla(build_suite(cfg), {}, pi0, cfg, ctx, RunOptions{Mode::PpoReplay});
      },
      ContractError);
}
