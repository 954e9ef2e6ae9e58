#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "irevla/core/errors.hpp"
#include "irevla/core/rng.hpp"
#include "irevla/env/expert.hpp"
#include "irevla/model/policy_net.hpp"

namespace irevla::eval {

using env::Category;
using env::TaskDescriptor;
using model::PolicyNet;
using nn::Tensor;

// Deterministic (mean-action) policy view of a network.
inline auto deterministic_policy(PolicyNet& net, model::Squash squash = model::Squash::Clamp) {
  return [&net, squash](const env::EnvState&, const Tensor& obs) {
    Tensor h = net.encode_batch(obs);
    Tensor mean = net.action_mean(net.pool_actor(h));
    Tensor a({mean.size()});
    for (std::size_t j = 0; j < mean.size(); ++j) a[j] = model::squash_value(mean[j], squash);
    return a;
  };
}

inline std::uint64_t eval_episode_seed(std::uint64_t seed, const TaskDescriptor& task, std::size_t episode) {
  return derive_seed(seed, {0x6576616cULL, env::task_hash(task), episode});
}

// Success rate of any policy callable over seeded resets.
template <class Policy>
double policy_success_rate(const TaskDescriptor& task, Policy&& policy, std::size_t episodes, std::uint64_t seed,
                           const env::EnvConfig& cfg = {}, std::size_t* successes_out = nullptr) {
  if (episodes == 0) throw ContractError("evaluation needs at least one episode");
  std::size_t ok = 0;
  for (std::size_t e = 0; e < episodes; ++e)
    ok += env::run_episode(task, eval_episode_seed(seed, task, e), policy, cfg).success ? 1 : 0;
  if (successes_out) *successes_out = ok;
  return static_cast<double>(ok) / static_cast<double>(episodes);
}

inline double eval_success_rate(PolicyNet& net, const TaskDescriptor& task, std::size_t episodes, std::uint64_t seed,
                                const env::EnvConfig& cfg = {}, model::Squash squash = model::Squash::Clamp,
                                std::size_t* successes_out = nullptr) {
  return policy_success_rate(task, deterministic_policy(net, squash), episodes, seed, cfg, successes_out);
}

struct TaskRow {
  std::string task_id;
  Category category = Category::Expert;
  std::size_t episodes = 0;
  std::size_t successes = 0;
  double rate = 0.0;
};

struct CategoryReport {
  std::string run_id;
  std::string checkpoint;
  std::uint64_t seed = 0;
  std::vector<TaskRow> rows;

  double category_mean(Category c) const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
      if (r.category == c) {
        s += r.rate;
        ++n;
      }
    return n ? s / static_cast<double>(n) : 0.0;
  }
  const TaskRow& row(const std::string& task_id) const {
    for (const auto& r : rows)
      if (r.task_id == task_id) return r;
    throw ContractError("report has no row for task '" + task_id + "'");
  }
};

struct EvalConfig {
  std::size_t episodes = 50;
  std::uint64_t seed = 777;
  model::Squash squash = model::Squash::Clamp;
};

inline CategoryReport category_report(PolicyNet& net, const env::Suite& suite, const EvalConfig& cfg,
                                      const env::EnvConfig& env_cfg = {}, std::string run_id = "",
                                      std::string checkpoint = "") {
  CategoryReport rep{std::move(run_id), std::move(checkpoint), cfg.seed, {}};
  for (const TaskDescriptor* t : suite.all()) {
    TaskRow row{t->id, t->category, cfg.episodes, 0, 0.0};
    row.rate = eval_success_rate(net, *t, cfg.episodes, cfg.seed, env_cfg, cfg.squash, &row.successes);
    rep.rows.push_back(row);
  }
  return rep;
}

struct ForgettingDelta {
  std::string baseline_id;
  std::string current_id;
  std::map<std::string, double> per_task;  // current - baseline
  double mean_expert_delta = 0.0;
};

inline ForgettingDelta forgetting_delta(const CategoryReport& baseline, const CategoryReport& current) {
  if (baseline.rows.size() != current.rows.size())
    throw ContractError("forgetting_delta: reports cover different task sets");
  ForgettingDelta d{baseline.checkpoint, current.checkpoint, {}, 0.0};
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < baseline.rows.size(); ++i) {
    const auto& b = baseline.rows[i];
    const auto& c = current.rows[i];
    if (b.task_id != c.task_id || b.category != c.category)
      throw ContractError("forgetting_delta: task '" + b.task_id + "' vs '" + c.task_id + "'");
    if (b.episodes != c.episodes) throw ContractError("forgetting_delta: episode counts differ for '" + b.task_id + "'");
    d.per_task[b.task_id] = c.rate - b.rate;
    if (b.category == Category::Expert) {
      s += c.rate - b.rate;
      ++n;
    }
  }
  d.mean_expert_delta = n ? s / static_cast<double>(n) : 0.0;
  return d;
}

inline const char* kReportHeader = "run_id,checkpoint,task_id,category,episodes,successes,rate";

inline void write_report_csv(std::ostream& os, const CategoryReport& rep, bool header = true) {
  if (header) os << kReportHeader << '\n';
  for (const auto& r : rep.rows) {
    char rate[32];
    std::snprintf(rate, sizeof rate, "%.4f", r.rate);
    os << rep.run_id << ',' << rep.checkpoint << ',' << r.task_id << ',' << env::category_name(r.category) << ','
       << r.episodes << ',' << r.successes << ',' << rate << '\n';
  }
}

}  // namespace irevla::eval
