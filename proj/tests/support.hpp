#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include "irevla/model/policy_net.hpp"
#include "irevla/nn/autodiff.hpp"
#include "irevla/nn/param_store.hpp"
#include "irevla/pipeline/config.hpp"

namespace irevla::fixtures {

// Finite differences over every entry of every parameter, compared to
// the gradients left in the store by `backward_pass`. Returns the largest
// relative error |g - fd| / max(floor, |g|, |fd|).
struct GradCheck {
  double floor = 1e-12;
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t entries = 0;
};

inline GradCheck finite_difference_check(nn::ParamStore& store, const std::function<double()>& loss,
                                         const std::function<void()>& backward_pass, double eps = 1e-3,
                                         double floor = 1e-12) {
  store.zero_grad();
  backward_pass();
  GradCheck out;
  out.floor = floor;
  for (auto& p : store) {
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double orig = p.value[k];
      auto at = [&](double dx) {
        p.value[k] = orig + dx;
        return loss();
      };
      // five-point stencil, O(eps^4) truncation error
      const double fd = (at(-2 * eps) - 8 * at(-eps) + 8 * at(eps) - at(2 * eps)) / (12 * eps);
      p.value[k] = orig;
      const double g = p.grad[k];
      const double err = std::abs(g - fd) / std::max({floor, std::abs(g), std::abs(fd)});
      ++out.entries;
      if (err > out.max_rel_error) {
        out.max_rel_error = err;
        out.worst = p.id + "[" + std::to_string(k) + "]";
      }
    }
  }
  store.zero_grad();
  return out;
}

// A small PolicyNet with every adapter switched on (B != 0) so that both
// LoRA factors, both pooling queries and both heads carry gradient.
inline model::PolicyNet random_policy(std::uint64_t seed) {
  model::ModelConfig mc;
  mc.d_in = 10;
  mc.tokens = 4;
  mc.d = 8;
  mc.hidden = 8;
  mc.blocks = 1;
  mc.lora_rank = 2;
  mc.seed = seed;
  model::PolicyNet net(mc);
  Rng rng(derive_seed(seed, {0xb0b}));
  for (auto& p : net.params())
    if (p.id.ends_with(".lora_B"))
      for (auto& v : p.value.values()) v = 0.1 * standard_normal(rng);
  return net;
}

// Joint objective touching every parameter: Gaussian log-likelihood of fixed
// actions, a value regression, and a linear probe on the action mean.
inline GradCheck policy_gradient_check(std::uint64_t seed, double floor = 1e-12, double eps = 1e-3) {
  model::PolicyNet net = random_policy(seed);
  const auto& mc = net.config();
  const std::size_t n = 3;
  Rng rng(derive_seed(seed, {0xda7a}));
  nn::Tensor obs({n * mc.tokens, mc.d_in}), act({n, mc.d_a}), target({n}), probe({n, mc.d_a});
  for (auto* t : {&obs, &act, &target, &probe})
    for (auto& v : t->values()) v = uniform(rng, -1, 1);
  auto loss = [&](bool with_grad) {
    nn::Tape tape;
    nn::Var h = net.encode(tape, tape.constant(obs));
    nn::Var mean = net.action_mean(tape, net.pool_actor(tape, h));
    nn::Var lp = nn::gaussian_logprob(tape.constant(act), mean, net.log_std(tape));
    nn::Var v = net.value(tape, net.pool_critic(tape, h));
    nn::Var l = nn::add(nn::scale(nn::mean(lp), -1.0), nn::mean(nn::square(nn::sub(v, tape.constant(target)))));
    l = nn::add(l, nn::sum(nn::mul(mean, tape.constant(probe))));
    if (with_grad) tape.backward(l);
    return l.item();
  };
  return finite_difference_check(net.params(), [&] { return loss(false); }, [&] { loss(true); }, eps, floor);
}

// A fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("irevla_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Smallest settings that still exercise every code path.
inline pipeline::RunConfig tiny_config(std::uint64_t seed = 3) {
  pipeline::RunConfig c;
  c.seed = seed;
  c.data_per_task = 4;
  c.model.d = 16;
  c.model.hidden = 16;
  c.model.blocks = 1;
  c.sft.epochs = 2;
  c.stage1.step_budget = 512;
  c.stage1.eval_episodes = 3;
  c.stage1.harvest_cap = 3;
  c.stage1.harvest_attempt_factor = 2;
  c.ppo.rollout_steps = 256;
  c.ppo.minibatch = 64;
  c.ppo.epochs = 1;
  c.stage2.sl.epochs = 1;
  c.eval.episodes = 2;
  return c;
}

}  // namespace irevla::fixtures
