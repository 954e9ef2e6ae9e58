#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "irevla/core/digest.hpp"
#include "irevla/core/errors.hpp"
#include "irevla/pipeline/config.hpp"

namespace irevla::cli {

using pipeline::RunConfig;

// One configurable key. `set` parses and range-checks a value; `get` prints
// it back in a form `set` accepts.
struct ConfigField {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("'" + key + "': cannot parse '" + v + "' as a number");
  return out;
}

template <class T, class Get>
ConfigField number(std::string key, Get ref, double lo, double hi) {
  return ConfigField{
      key,
      [key, ref, lo, hi](RunConfig& c, const std::string& v) {
        const T x = parse_number<T>(key, v);
        if (!(static_cast<double>(x) >= lo && static_cast<double>(x) <= hi))
          throw ConfigError("'" + key + "' = " + v + " is out of range [" + fmt_double(lo) + ", " + fmt_double(hi) + "]");
        ref(c) = x;
      },
      [ref](const RunConfig& c) {
        const T x = ref(const_cast<RunConfig&>(c));
        if constexpr (std::is_floating_point_v<T>) return fmt_double(x);
        else return std::to_string(x);
      }};
}

template <class Get>
ConfigField boolean(std::string key, Get ref) {
  return ConfigField{key,
                     [key, ref](RunConfig& c, const std::string& v) {
                       if (v == "true" || v == "1") ref(c) = true;
                       else if (v == "false" || v == "0") ref(c) = false;
                       else throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
                     },
                     [ref](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

}  // namespace detail

#define IREVLA_REF(expr) [](RunConfig& c) -> auto& { return c.expr; }

inline const std::vector<ConfigField>& config_schema() {
  using detail::boolean;
  using detail::number;
  using std::size_t;
  constexpr double kBig = 1e12;
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    f.push_back(number<std::uint64_t>("run.seed", IREVLA_REF(seed), 0, 1.9e19));
    f.push_back(ConfigField{"run.output_dir",
                            [](RunConfig& c, const std::string& v) {
                              if (v.empty()) throw ConfigError("'run.output_dir' must not be empty");
                              c.output_dir = v;
                            },
                            [](const RunConfig& c) { return c.output_dir; }});
    f.push_back(number<size_t>("run.data_per_task", IREVLA_REF(data_per_task), 1, 1e6));
    f.push_back(boolean("run.wall_clock", IREVLA_REF(wall_clock)));

    f.push_back(number<std::uint64_t>("suite.seed", IREVLA_REF(suite.seed), 0, 1.9e19));
    f.push_back(number<size_t>("suite.expert_count", IREVLA_REF(suite.expert_count), 1, 64));
    f.push_back(number<size_t>("suite.rl_count", IREVLA_REF(suite.rl_count), 1, 64));
    f.push_back(number<size_t>("suite.holdout_count", IREVLA_REF(suite.holdout_count), 0, 64));

    f.push_back(number<size_t>("env.horizon", IREVLA_REF(env.horizon), 1, 100000));
    f.push_back(number<double>("env.step_size", IREVLA_REF(env.step_size), 1e-6, 1.0));
    f.push_back(number<size_t>("env.d_in", IREVLA_REF(env.d_in), 10, 4096));
    f.push_back(number<size_t>("env.tokens", IREVLA_REF(env.tokens), 4, 4096));

    f.push_back(number<size_t>("model.d", IREVLA_REF(model.d), 1, 4096));
    f.push_back(number<size_t>("model.blocks", IREVLA_REF(model.blocks), 1, 64));
    f.push_back(number<size_t>("model.hidden", IREVLA_REF(model.hidden), 1, 4096));
    f.push_back(number<size_t>("model.lora_rank", IREVLA_REF(model.lora_rank), 1, 4096));
    f.push_back(number<double>("model.lora_alpha", IREVLA_REF(model.lora_alpha), 1e-9, 1e6));
    f.push_back(number<double>("model.log_std_init", IREVLA_REF(model.log_std_init), -20, 5));
    f.push_back(number<double>("model.log_std_min", IREVLA_REF(model.log_std_min), -20, 5));
    f.push_back(number<double>("model.log_std_max", IREVLA_REF(model.log_std_max), -20, 5));

    auto sl = [&f](const std::string& s, auto ref) {
      f.push_back(number<size_t>(s + ".epochs", [ref](RunConfig& c) -> auto& { return ref(c).epochs; }, 1, 1e6));
      f.push_back(number<size_t>(s + ".batch_size", [ref](RunConfig& c) -> auto& { return ref(c).batch_size; }, 1, 1e6));
      f.push_back(number<double>(s + ".lr", [ref](RunConfig& c) -> auto& { return ref(c).lr; }, 1e-12, 1.0));
      f.push_back(number<size_t>(s + ".patience", [ref](RunConfig& c) -> auto& { return ref(c).patience; }, 1, 1e6));
      f.push_back(number<double>(s + ".min_rel_improvement",
                                 [ref](RunConfig& c) -> auto& { return ref(c).min_rel_improvement; }, 0, 1));
      f.push_back(boolean(s + ".anneal", [ref](RunConfig& c) -> auto& { return ref(c).anneal; }));
    };
    sl("sft", IREVLA_REF(sft));

    f.push_back(ConfigField{"stage1.engine",
                            [](RunConfig& c, const std::string& v) {
                              if (v == "ppo") c.stage1.engine = pipeline::Engine::Ppo;
                              else if (v == "sacfd") c.stage1.engine = pipeline::Engine::Sacfd;
                              else throw ConfigError("'stage1.engine' must be ppo or sacfd, got '" + v + "'");
                            },
                            [](const RunConfig& c) { return std::string(pipeline::engine_name(c.stage1.engine)); }});
    f.push_back(number<double>("stage1.target", IREVLA_REF(stage1.target), 0, 1));
    f.push_back(number<size_t>("stage1.eval_episodes", IREVLA_REF(stage1.eval_episodes), 1, 1e6));
    f.push_back(number<size_t>("stage1.step_budget", IREVLA_REF(stage1.step_budget), 1, kBig));
    f.push_back(number<size_t>("stage1.harvest_cap", IREVLA_REF(stage1.harvest_cap), 1, 1e6));
    f.push_back(number<size_t>("stage1.harvest_attempt_factor", IREVLA_REF(stage1.harvest_attempt_factor), 1, 1e6));
    f.push_back(number<size_t>("stage1.sac_eval_interval", IREVLA_REF(stage1.sac_eval_interval), 1, kBig));
    f.push_back(number<size_t>("stage1.sac_warmup", IREVLA_REF(stage1.sac_warmup), 1, kBig));

    sl("stage2", IREVLA_REF(stage2.sl));
    f.push_back(boolean("stage2.lora_reset", IREVLA_REF(stage2.lora_reset)));

    f.push_back(number<double>("ppo.gamma", IREVLA_REF(ppo.gamma), 0, 1));
    f.push_back(number<double>("ppo.lambda", IREVLA_REF(ppo.lambda), 0, 1));
    f.push_back(number<double>("ppo.clip", IREVLA_REF(ppo.clip), 1e-6, 1));
    f.push_back(number<size_t>("ppo.epochs", IREVLA_REF(ppo.epochs), 1, 1000));
    f.push_back(number<size_t>("ppo.minibatch", IREVLA_REF(ppo.minibatch), 1, 1e6));
    f.push_back(number<size_t>("ppo.rollout_steps", IREVLA_REF(ppo.rollout_steps), 1, 1e7));
    f.push_back(number<double>("ppo.entropy_coef", IREVLA_REF(ppo.entropy_coef), 0, 10));
    f.push_back(number<double>("ppo.value_coef", IREVLA_REF(ppo.value_coef), 0, 100));
    f.push_back(number<double>("ppo.max_grad_norm", IREVLA_REF(ppo.max_grad_norm), 1e-9, 1e6));
    f.push_back(number<double>("ppo.lr", IREVLA_REF(ppo.lr), 1e-12, 1));

    f.push_back(number<double>("sac.gamma", IREVLA_REF(sac.gamma), 0, 1));
    f.push_back(number<double>("sac.tau", IREVLA_REF(sac.tau), 0, 1));
    f.push_back(number<size_t>("sac.batch", IREVLA_REF(sac.batch), 2, 1e6));
    f.push_back(number<size_t>("sac.replay_capacity", IREVLA_REF(sac.replay_capacity), 1, 1e9));
    f.push_back(number<size_t>("sac.demo_trajectories", IREVLA_REF(sac.demo_trajectories), 1, 1e6));
    f.push_back(number<double>("sac.lr", IREVLA_REF(sac.lr), 1e-12, 1));
    f.push_back(number<double>("sac.init_alpha", IREVLA_REF(sac.init_alpha), 1e-9, 1e3));
    f.push_back(boolean("sac.learn_alpha", IREVLA_REF(sac.learn_alpha)));
    f.push_back(number<size_t>("sac.hidden", IREVLA_REF(sac.hidden), 1, 4096));

    f.push_back(number<size_t>("eval.episodes", IREVLA_REF(eval.episodes), 1, 1e6));
    f.push_back(number<std::uint64_t>("eval.seed", IREVLA_REF(eval.seed), 0, 1.9e19));

    f.push_back(number<double>("split.timeout_s", IREVLA_REF(split_timeout_s), 1e-3, 1e6));
    f.push_back(number<size_t>("split.retries", IREVLA_REF(split_retries), 0, 100));
    return f;
  }();
  return fields;
}

#undef IREVLA_REF

inline const std::vector<std::string> kRequiredKeys = {"run.seed"};

inline void validate(const RunConfig& c) {
  if (c.model.log_std_min > c.model.log_std_max) throw ConfigError("'model.log_std_min' exceeds 'model.log_std_max'");
  if (c.model.log_std_init < c.model.log_std_min || c.model.log_std_init > c.model.log_std_max)
    throw ConfigError("'model.log_std_init' lies outside [log_std_min, log_std_max]");
}

// Parses flat `section.key = value` lines. Blank lines and lines starting
// with '#' are ignored; keys may appear once.
inline RunConfig parse_config_text(const std::string& text, const std::string& source = "<config>") {
  std::map<std::string, const ConfigField*> by_key;
  for (const auto& f : config_schema()) by_key[f.key] = &f;
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    const std::string where = source + ":" + std::to_string(no) + ": ";
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'section.key = value', got '" + t + "'");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->second->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  for (const auto& k : kRequiredKeys)
    if (!seen.count(k)) throw ConfigError(source + ": missing required key '" + k + "'");
  validate(cfg);
  return cfg;
}

inline RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

// Every key with its effective value; parses back to the same RunConfig.
inline std::string resolved_snapshot(const RunConfig& c) {
  std::string out;
  for (const auto& f : config_schema()) out += f.key + " = " + f.get(c) + "\n";
  return out;
}

inline void write_snapshot(const RunConfig& c, const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  os << resolved_snapshot(c);
  if (!os) throw IoError("cannot write config snapshot '" + path.string() + "'");
}

// Fingerprint of everything that influences training; the output directory
// and the transport knobs are excluded so actor and learner may differ there.
inline std::uint64_t config_digest(const RunConfig& c) {
  Fnv1a h;
  for (const auto& f : config_schema()) {
    if (f.key == "run.output_dir" || f.key.rfind("split.", 0) == 0 || f.key == "run.wall_clock") continue;
    const std::string line = f.key + "=" + f.get(c) + "\n";
    h.update(line.data(), line.size());
  }
  return h.value();
}

}  // namespace irevla::cli
