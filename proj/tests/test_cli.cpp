#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>
#include <future>
#include <sstream>

#include "irevla/cli/commands.hpp"
#include "support.hpp"

using namespace irevla;
using namespace irevla::cli;
namespace fs = std::filesystem;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config_text(text, "cfg");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct Invocation {
  int rc;
  std::string out, err;
};

Invocation run(std::vector<std::string> args) {
  args.insert(args.begin(), "irevla");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int rc = dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {rc, out.str(), err.str()};
}

// A config file describing a tiny run rooted at `dir`.
fs::path write_tiny_config(const fs::path& dir, std::uint64_t seed = 3) {
  RunConfig c = fixtures::tiny_config(seed);
  c.output_dir = (dir / "run").string();
  c.split_timeout_s = 30;
  c.split_retries = 8;
  fs::create_directories(dir);
  const auto path = dir / "tiny.cfg";
  std::ofstream(path) << "# tiny run\n" << resolved_snapshot(c);
  return path;
}

std::size_t count_lines(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) n += l == needle;
  return n;
}

}  // namespace

// ---------------------------------------------------------------- config

TEST(Config, MinimalFileResolvesToDefaults) {
  RunConfig c = parse_config_text("run.seed = 7\n");
  RunConfig d;
  d.seed = 7;
  EXPECT_EQ(resolved_snapshot(c), resolved_snapshot(d));
  EXPECT_EQ(c.stage1.target, d.stage1.target);
}

TEST(Config, SnapshotIsAFixpoint) {
  RunConfig c = parse_config_text("run.seed = 1\nppo.lr = 1e-4\nstage1.engine = sacfd\nsac.learn_alpha = false\n");
  const std::string snap = resolved_snapshot(c);
  EXPECT_EQ(resolved_snapshot(parse_config_text(snap)), snap);
  EXPECT_EQ(count_lines(snap, "stage1.engine = sacfd"), 1u);
  for (const auto& f : config_schema()) EXPECT_NE(snap.find(f.key + " = "), std::string::npos) << f.key;
}

TEST(Config, ErrorsNameTheKeyAndLine) {
  auto e = error_of("run.seed = 1\nppo.gamma = 1.5\n");
  EXPECT_NE(e.find("cfg:2"), std::string::npos) << e;
  EXPECT_NE(e.find("ppo.gamma"), std::string::npos) << e;
  EXPECT_NE(e.find("out of range"), std::string::npos) << e;

  EXPECT_NE(error_of("run.seed = 1\nppo.gama = 0.9\n").find("unknown key 'ppo.gama'"), std::string::npos);
  EXPECT_NE(error_of("run.seed = 1\nrun.seed = 2\n").find("duplicate key"), std::string::npos);
  EXPECT_NE(error_of("ppo.lr = 1e-3\n").find("missing required key 'run.seed'"), std::string::npos);
  EXPECT_NE(error_of("run.seed = 1\nppo.lr\n").find("expected 'section.key = value'"), std::string::npos);
  EXPECT_NE(error_of("run.seed = x\n").find("cannot parse"), std::string::npos);
  EXPECT_NE(error_of("run.seed = 1\nsac.learn_alpha = maybe\n").find("true or false"), std::string::npos);
  EXPECT_NE(error_of("run.seed = 1\nstage1.engine = dqn\n").find("ppo or sacfd"), std::string::npos);
  EXPECT_NE(error_of("run.seed = 1\nmodel.log_std_min = 1\nmodel.log_std_max = 0\n").find("log_std_min"),
            std::string::npos);
  EXPECT_EQ(error_of("# comment\n\n  run.seed = 1  \n"), "");
}

TEST(Config, DigestTracksTrainingKnobsOnly) {
  RunConfig a = parse_config_text("run.seed = 1\n");
  RunConfig b = a;
  b.output_dir = "elsewhere";
  b.split_timeout_s = 5;
  b.split_retries = 0;
  b.wall_clock = true;
  EXPECT_EQ(config_digest(a), config_digest(b));
  b.ppo.lr *= 2;
  EXPECT_NE(config_digest(a), config_digest(b));
  RunConfig c = a;
  c.seed = 2;
  EXPECT_NE(config_digest(a), config_digest(c));
}

// ---------------------------------------------------------------- trajectory files

TEST(TrajectoryIo, RoundTripIsBitwise) {
  auto suite = env::make_suite(env::SuiteConfig{}, env::EnvConfig{});
  auto ds = env::generate_expert_dataset(suite, 2, 5).trajectories;
  ASSERT_FALSE(ds.empty());
  const auto& mc = model::ModelConfig{};
  std::stringstream ss;
  write_trajectories(ss, ds, mc.tokens, mc.d_in, mc.d_a);
  TrajectoryFileInfo info;
  auto back = read_trajectories(ss, &info);
  EXPECT_EQ(info.m, mc.tokens);
  EXPECT_EQ(info.d_in, mc.d_in);
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back[i].task_id, ds[i].task_id);
    EXPECT_EQ(back[i].seed, ds[i].seed);
    EXPECT_EQ(back[i].success, ds[i].success);
    ASSERT_EQ(back[i].size(), ds[i].size());
    for (std::size_t t = 0; t < ds[i].size(); ++t) {
      EXPECT_EQ(back[i].steps[t].obs.values(), ds[i].steps[t].obs.values());
      EXPECT_EQ(back[i].steps[t].action.values(), ds[i].steps[t].action.values());
      EXPECT_EQ(back[i].steps[t].reward, ds[i].steps[t].reward);
      EXPECT_EQ(back[i].steps[t].done, ds[i].steps[t].done);
    }
  }
}

TEST(TrajectoryIo, CorruptFilesAreRejected) {
  auto suite = env::make_suite(env::SuiteConfig{}, env::EnvConfig{});
  auto ds = env::generate_expert_dataset(suite, 1, 5).trajectories;
  const model::ModelConfig mc;
  std::stringstream ss;
  write_trajectories(ss, ds, mc.tokens, mc.d_in, mc.d_a);
  const std::string good = ss.str();

  auto reject = [](const std::string& text) {
    std::istringstream is(text);
    EXPECT_THROW(read_trajectories(is), IoError) << text.substr(0, 80);
  };
  reject("");
  reject("not json\n");
  reject(good.substr(0, good.find('\n') + 1) + "{\"traj_id\": 0}\n");
  std::string bad_version = good;
  bad_version.replace(bad_version.find("\"format_version\":1"), 18, "\"format_version\":9");
  reject(bad_version);
  std::string half_reward = good;
  const auto at = half_reward.find("\"reward\":0.0");
  ASSERT_NE(at, std::string::npos);
  half_reward.replace(at, 13, "\"reward\":0.5");
  reject(half_reward);
  std::string one_fewer = good;
  one_fewer.replace(one_fewer.find("\"trajectories\":"), 16, "\"trajectories\":9");
  reject(one_fewer);
  std::vector<env::Trajectory> narrow = {ds[0]};
  narrow[0].steps[0].action = nn::Tensor({2});
  std::ostringstream os;
  EXPECT_THROW(write_trajectories(os, narrow, mc.tokens, mc.d_in, mc.d_a), DimensionError);
}

// ---------------------------------------------------------------- dispatch

TEST(Dispatch, UsageErrorsExitWithTwo) {
  auto unknown = run({"frobnicate"});
  EXPECT_EQ(unknown.rc, 2);
  EXPECT_NE(unknown.err.find("unknown subcommand 'frobnicate'"), std::string::npos);
  EXPECT_NE(unknown.err.find("gen-data"), std::string::npos);

  EXPECT_EQ(run({}).rc, 2);
  EXPECT_EQ(run({"train"}).rc, 2);
  auto dir = fixtures::scratch_dir("cli_usage");
  auto cfg = write_tiny_config(dir).string();
  EXPECT_EQ(run({"baseline", "--config", cfg, "--mode", "dqn"}).rc, 2);
  EXPECT_EQ(run({"eval", "--config", cfg}).rc, 2);
  EXPECT_EQ(run({"--help"}).rc, 0);
}

TEST(Dispatch, RuntimeErrorsExitWithOneAndSayWhatToDo) {
  auto dir = fixtures::scratch_dir("cli_runtime");
  auto missing = run({"sft", "--config", (dir / "nope.cfg").string()});
  EXPECT_EQ(missing.rc, 1);
  EXPECT_NE(missing.err.find("cannot open config file"), std::string::npos);

  std::ofstream(dir / "bad.cfg") << "run.seed = 1\nppo.gamma = 1.5\n";
  auto bad = run({"train", "--config", (dir / "bad.cfg").string()});
  EXPECT_EQ(bad.rc, 1);
  EXPECT_NE(bad.err.find("ppo.gamma"), std::string::npos);

  auto cfg = write_tiny_config(dir).string();
  auto no_data = run({"train", "--config", cfg});
  EXPECT_EQ(no_data.rc, 1);
  EXPECT_NE(no_data.err.find("run `irevla gen-data` first"), std::string::npos) << no_data.err;
  ASSERT_EQ(run({"gen-data", "--config", cfg}).rc, 0);
  auto no_sft = run({"train", "--config", cfg});
  EXPECT_EQ(no_sft.rc, 1);
  EXPECT_NE(no_sft.err.find("run `irevla sft` first"), std::string::npos) << no_sft.err;
  auto no_ckpt = run({"eval", "--config", cfg, "--checkpoint", "final.ckpt"});
  EXPECT_EQ(no_ckpt.rc, 1);
  EXPECT_NE(no_ckpt.err.find("not found"), std::string::npos);
}

TEST(Dispatch, FullTinyWorkflow) {
  auto dir = fixtures::scratch_dir("cli_flow");
  auto cfg = write_tiny_config(dir).string();
  const fs::path run_dir = dir / "run";
  for (const char* cmd : {"gen-data", "sft", "train"}) {
    auto r = run({cmd, "--config", cfg});
    ASSERT_EQ(r.rc, 0) << cmd << ": " << r.err;
  }
  EXPECT_TRUE(fs::exists(run_dir / "final.ckpt"));
  const auto metrics = read_file(run_dir / "metrics.csv");
  EXPECT_EQ(count_lines(metrics, std::string(pipeline::kMetricsHeader)), 1u);
  EXPECT_EQ(metrics.rfind(pipeline::kMetricsHeader, 0), 0u);
  const auto snap = read_file(run_dir / "config.resolved");
  EXPECT_EQ(resolved_snapshot(parse_config_text(snap)), snap);

  auto ev = run({"eval", "--config", cfg, "--checkpoint", "final.ckpt"});
  ASSERT_EQ(ev.rc, 0) << ev.err;
  EXPECT_EQ(ev.out.rfind(eval::kReportHeader, 0), 0u);
  const auto reports = read_file(run_dir / "reports.csv");
  EXPECT_EQ(count_lines(reports, std::string(eval::kReportHeader)), 1u);

  auto base = run({"baseline", "--config", cfg, "--mode", "ppo-replay"});
  ASSERT_EQ(base.rc, 0) << base.err;
  EXPECT_TRUE(fs::exists(run_dir / "ppo_replay" / "final.ckpt"));
  auto abl = run({"ablate", "--config", cfg, "--mode", "freeze"});
  ASSERT_EQ(abl.rc, 0) << abl.err;
  EXPECT_TRUE(fs::exists(run_dir / "irevla_freeze" / "final.ckpt"));
}

TEST(Dispatch, RunDirEnvironmentVariableOverridesTheConfig) {
  auto dir = fixtures::scratch_dir("cli_env");
  auto cfg = write_tiny_config(dir).string();
  const fs::path elsewhere = dir / "elsewhere";
  ::setenv("IREVLA_RUN_DIR", elsewhere.c_str(), 1);
  auto r = run({"gen-data", "--config", cfg});
  ::unsetenv("IREVLA_RUN_DIR");
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_TRUE(fs::exists(elsewhere / "expert.jsonl"));
  EXPECT_FALSE(fs::exists(dir / "run" / "expert.jsonl"));
  auto snap = parse_config_text(read_file(elsewhere / "config.resolved"));
  EXPECT_EQ(snap.output_dir, elsewhere.string());
}

TEST(Dispatch, SplitCommandsReproduceTheSingleProcessRun) {
  auto dir = fixtures::scratch_dir("cli_split");
  auto cfg = write_tiny_config(dir).string();
  const fs::path run_dir = dir / "run";
  for (const char* cmd : {"gen-data", "sft", "train"}) ASSERT_EQ(run({cmd, "--config", cfg}).rc, 0) << cmd;

  std::uint16_t port;
  {
    split::Listener probe(split::parse_endpoint("127.0.0.1:0"));
    port = probe.port();
  }
  const std::string addr = "127.0.0.1:" + std::to_string(port);
  auto learner = std::async(std::launch::async, [&] { return run({"serve-learner", "--config", cfg, "--bind", addr}); });
  auto actor = run({"run-actor", "--config", cfg, "--connect", addr});
  auto l = learner.get();
  ASSERT_EQ(l.rc, 0) << l.err;
  ASSERT_EQ(actor.rc, 0) << actor.err;
  EXPECT_NE(actor.out.find("0 reconnects"), std::string::npos) << actor.out;

  const auto single = model::load_checkpoint(run_dir / "final.ckpt").params().digest();
  EXPECT_EQ(model::load_checkpoint(run_dir / "learner" / "final.ckpt").params().digest(), single);
  EXPECT_EQ(model::load_checkpoint(run_dir / "actor" / "final.ckpt").params().digest(), single);
  for (std::size_t i = 0; i < pipeline::build_suite(fixtures::tiny_config()).rl.size(); ++i)
    EXPECT_EQ(read_file(RunPaths{run_dir / "learner"}.d_rl(i)), read_file(RunPaths{run_dir}.d_rl(i))) << i;
}

#ifdef IREVLA_CLI_PATH
TEST(Binary, ExitCodesFromTheRealExecutable) {
  auto dir = fixtures::scratch_dir("cli_binary");
  auto sh = [&](const std::string& args) {
    const std::string cmd = std::string(IREVLA_CLI_PATH) + " " + args + " > " + (dir / "out").string() + " 2>&1";
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  };
  EXPECT_EQ(sh("--help"), 0);
  EXPECT_EQ(sh("frobnicate"), 2);
  EXPECT_NE(read_file(dir / "out").find("unknown subcommand"), std::string::npos);
  EXPECT_EQ(sh("sft"), 2);
  EXPECT_EQ(sh("sft --config " + (dir / "missing.cfg").string()), 1);
  auto cfg = write_tiny_config(dir).string();
  EXPECT_EQ(sh("gen-data --config " + cfg), 0);
  EXPECT_TRUE(fs::exists(dir / "run" / "expert.jsonl"));
}
#endif
