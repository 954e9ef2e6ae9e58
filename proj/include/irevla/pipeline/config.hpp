#pragma once

#include <cstdint>
#include <string>

#include "irevla/algos/ppo.hpp"
#include "irevla/algos/sacfd.hpp"
#include "irevla/env/task.hpp"
#include "irevla/eval/eval.hpp"
#include "irevla/model/policy_net.hpp"
#include "irevla/pipeline/supervised.hpp"

namespace irevla::pipeline {

enum class Engine : std::uint8_t { Ppo, Sacfd };

inline const char* engine_name(Engine e) { return e == Engine::Ppo ? "ppo" : "sacfd"; }

struct Stage1Config {
  Engine engine = Engine::Ppo;
  double target = 0.9;             // deterministic-eval success that counts as converged
  std::size_t eval_episodes = 50;
  std::size_t step_budget = 200000;
  std::size_t harvest_cap = 50;
  std::size_t harvest_attempt_factor = 10;  // at most cap * factor harvest episodes
  std::size_t sac_eval_interval = 2000;     // env steps between SACfD convergence checks
  std::size_t sac_warmup = 256;             // online transitions before the first SACfD update
};

struct Stage2Config {
  SupervisedConfig sl{150, 32, 1e-3, 150, 1e-3, model::Squash::Clamp, true};
  bool lora_reset = false;  // re-zero every adapter B before each Stage 2
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "runs/default";
  env::SuiteConfig suite;
  env::EnvConfig env;
  model::ModelConfig model;
  std::size_t data_per_task = 50;
  SupervisedConfig sft{50, 32, 1e-3, 5, 1e-3, model::Squash::Clamp};
  Stage1Config stage1;
  Stage2Config stage2;
  algos::PpoConfig ppo;
  algos::SacConfig sac;
  eval::EvalConfig eval;
  bool wall_clock = false;  // record real wall_ms in metrics.csv (breaks byte-identical reruns)
  double split_timeout_s = 300.0;
  std::size_t split_retries = 3;
};

}  // namespace irevla::pipeline
