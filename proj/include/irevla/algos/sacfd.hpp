#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "irevla/algos/buffers.hpp"
#include "irevla/core/errors.hpp"
#include "irevla/core/rng.hpp"
#include "irevla/model/policy_net.hpp"
#include "irevla/nn/autodiff.hpp"
#include "irevla/nn/layers.hpp"
#include "irevla/nn/optim.hpp"

namespace irevla::algos {

struct SacConfig {
  double gamma = 0.99;
  double tau = 0.005;
  std::size_t batch = 256;
  std::size_t replay_capacity = 100000;
  std::size_t demo_trajectories = 20;
  double lr = 3e-4;
  double init_alpha = 0.1;
  bool learn_alpha = true;
  std::size_t hidden = 64;
};

struct SacDiagnostics {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha_loss = 0.0;
  double alpha = 0.0;
  double q1 = 0.0;
  double q2 = 0.0;
  double entropy = 0.0;  // -E[log pi]
  std::size_t demo_samples = 0;
  std::size_t online_samples = 0;
};

// Index selection for one mixed batch: floor(B/2) from the demonstrations and
// the remaining ceil(B/2) from the online buffer, each uniform with replacement.
struct MixedBatch {
  std::vector<std::size_t> demo;
  std::vector<std::size_t> online;
};

inline MixedBatch sample_mixed_batch(std::size_t demo_size, std::size_t online_size, std::size_t batch, Rng& rng) {
  if (demo_size == 0 || online_size == 0) throw ContractError("sacfd: both buffers must be nonempty");
  if (batch < 2) throw ContractError("sacfd: batch must hold at least one sample of each kind");
  MixedBatch mb;
  std::uniform_int_distribution<std::size_t> pick_demo(0, demo_size - 1), pick_online(0, online_size - 1);
  for (std::size_t i = 0; i < batch / 2; ++i) mb.demo.push_back(pick_demo(rng));
  for (std::size_t i = 0; i < batch - batch / 2; ++i) mb.online.push_back(pick_online(rng));
  return mb;
}

// One Q network over (pool_q(h), a), with its own token-learner query.
struct QNet {
  std::size_t query = 0;
  nn::Linear fc1, fc2, fc3;
};

// Twin critics, their Polyak targets and the temperature, all in latent space.
class SacfdLearner {
 public:
  SacfdLearner(const PolicyNet& net, SacConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    const auto& mc = net.config();
    d_ = mc.d;
    d_a_ = mc.d_a;
    tokens_ = mc.tokens;
    Rng rng(derive_seed(seed, {0x73616366ULL}));
    for (int k = 0; k < 2; ++k) {
      const std::string p = "q" + std::to_string(k + 1);
      QNet q;
      q.query = live_.add(p + ".query", nn::random_normal({d_}, 0.1, rng), nn::Group::Head);
      q.fc1 = nn::Linear::create(live_, p + ".fc1", d_ + d_a_, cfg_.hidden, nn::Group::Head, rng);
      q.fc2 = nn::Linear::create(live_, p + ".fc2", cfg_.hidden, cfg_.hidden, nn::Group::Head, rng);
      q.fc3 = nn::Linear::create(live_, p + ".fc3", cfg_.hidden, 1, nn::Group::Head, rng);
      q_[k] = q;
    }
    for (const auto& p : live_) target_.add(p.id, p.value, p.group);
    for (auto& p : target_) p.trainable = false;
    log_alpha_.add("log_alpha", Tensor::scalar(std::log(cfg_.init_alpha)), nn::Group::Head);
    log_alpha_[0].trainable = cfg_.learn_alpha;
    critic_opt_ = std::make_unique<nn::Adam>(live_, nn::AdamConfig{cfg_.lr});
    actor_opt_ = std::make_unique<nn::Adam>(net.params(), nn::AdamConfig{cfg_.lr});
    alpha_opt_ = std::make_unique<nn::Adam>(log_alpha_, nn::AdamConfig{cfg_.lr});
  }

  const SacConfig& config() const { return cfg_; }
  double alpha() const { return std::exp(log_alpha_[0].value.item()); }
  double target_entropy() const { return -static_cast<double>(d_a_); }
  nn::ParamStore& critics() { return live_; }
  nn::ParamStore& targets() { return target_; }
  std::size_t updates() const { return updates_; }
  std::uint64_t actor_backbone_updates() const {
    return actor_opt_->updates(nn::Group::Base) + actor_opt_->updates(nn::Group::Lora);
  }

  // Q_k(h, a) for stacked latents h [(N*m) x d] and actions a [N x d_a].
  nn::Var q_value(nn::Tape& tape, nn::ParamStore& store, int k, nn::Var h, nn::Var a) {
    const QNet& q = q_[k];
    nn::Var pooled = nn::attn_pool(h, tape.param(store[q.query]), tokens_);
    nn::Var x = nn::concat_cols(pooled, a);
    x = nn::tanh(q.fc1.forward(tape, store, x));
    x = nn::tanh(q.fc2.forward(tape, store, x));
    nn::Var out = q.fc3.forward(tape, store, x);
    return nn::reshape(out, {out.value().rows()});
  }

  // Reparameterized tanh-Gaussian sample from the actor for latents h.
  struct ActorSample {
    nn::Var action;   // tanh(u)
    nn::Var logprob;  // [N]
  };
  ActorSample actor_sample(nn::Tape& tape, PolicyNet& net, nn::Var h, Rng& rng) {
    nn::Var mean = net.action_mean(tape, net.pool_actor(tape, h));
    nn::Var log_std = net.log_std(tape);
    const std::size_t n = mean.value().rows();
    Tensor eps({n, d_a_});
    for (auto& e : eps.values()) e = standard_normal(rng);
    nn::Var u = nn::add(mean, nn::mul_row(tape.constant(eps), nn::exp(log_std)));
    nn::Var logp = nn::sub(nn::gaussian_logprob(u, mean, log_std), nn::tanh_log_jacobian(u));
    return {nn::tanh(u), logp};
  }

  SacDiagnostics update(const ReplayBuffer& online, const DemoBuffer& demo, PolicyNet& net, Rng& rng) {
    if (!net.backbone_frozen()) throw ContractError("sacfd_update requires a frozen backbone (latent-space updates)");
    if (demo.empty() || online.empty()) throw ContractError("sacfd_update: both buffers must be nonempty");
    MixedBatch mb = sample_mixed_batch(demo.size(), online.size(), cfg_.batch, rng);
    std::vector<const LatentTransition*> rows;
    for (auto i : mb.demo) rows.push_back(&demo[i]);
    for (auto i : mb.online) rows.push_back(&online[i]);
    const std::size_t n = rows.size();

    Tensor H({n * tokens_, d_}), H2({n * tokens_, d_}), A({n, d_a_}), R({n}), notdone({n});
    for (std::size_t i = 0; i < n; ++i) {
      const auto& t = *rows[i];
      std::copy(t.latent.data(), t.latent.data() + t.latent.size(), H.data() + i * tokens_ * d_);
      std::copy(t.next_latent.data(), t.next_latent.data() + t.next_latent.size(), H2.data() + i * tokens_ * d_);
      std::copy(t.action.data(), t.action.data() + d_a_, A.data() + i * d_a_);
      R[i] = t.reward;
      notdone[i] = t.done ? 0.0 : 1.0;
    }

    SacDiagnostics diag;
    diag.demo_samples = mb.demo.size();
    diag.online_samples = mb.online.size();
    const double alpha = this->alpha();

    // Critic targets.
    Tensor y({n});
    {
      nn::Tape tape;
      nn::Var h2 = tape.constant(H2);
      ActorSample next = actor_sample(tape, net, h2, rng);
      nn::Var a2 = tape.constant(next.action.value());
      const Tensor& q1 = q_value(tape, target_, 0, h2, a2).value();
      const Tensor& q2 = q_value(tape, target_, 1, h2, a2).value();
      const Tensor& lp = next.logprob.value();
      for (std::size_t i = 0; i < n; ++i)
        y[i] = R[i] + cfg_.gamma * notdone[i] * (std::min(q1[i], q2[i]) - alpha * lp[i]);
    }

    // Critic step.
    {
      nn::Tape tape;
      nn::Var h = tape.constant(H), a = tape.constant(A), target = tape.constant(y);
      nn::Var q1 = q_value(tape, live_, 0, h, a);
      nn::Var q2 = q_value(tape, live_, 1, h, a);
      nn::Var loss = nn::add(nn::mean(nn::square(nn::sub(q1, target))), nn::mean(nn::square(nn::sub(q2, target))));
      if (!std::isfinite(loss.item())) throw DivergenceError("sacfd: non-finite critic loss");
      diag.critic_loss = loss.item();
      diag.q1 = mean_of(q1.value());
      diag.q2 = mean_of(q2.value());
      tape.backward(loss);
      critic_opt_->step(live_);
    }

    // Actor step: minimize alpha log pi - min Q.
    Tensor logp_now;
    {
      nn::Tape tape;
      nn::Var h = tape.constant(H);
      ActorSample s = actor_sample(tape, net, h, rng);
      nn::Var qmin = nn::minimum(q_value(tape, live_, 0, h, s.action), q_value(tape, live_, 1, h, s.action));
      nn::Var loss = nn::mean(nn::sub(nn::scale(s.logprob, alpha), qmin));
      if (!std::isfinite(loss.item())) throw DivergenceError("sacfd: non-finite actor loss");
      diag.actor_loss = loss.item();
      logp_now = s.logprob.value();
      tape.backward(loss);
      live_.zero_grad();
      actor_opt_->step(net.params());
    }
    diag.entropy = -mean_of(logp_now);

    // Temperature step against the target entropy.
    if (cfg_.learn_alpha) {
      nn::Tape tape;
      Tensor c = logp_now;
      for (auto& v : c.values()) v += target_entropy();
      nn::Var loss = nn::scale(nn::mean(nn::mul_scalar(tape.constant(c), tape.param(log_alpha_[0]))), -1.0);
      diag.alpha_loss = loss.item();
      tape.backward(loss);
      alpha_opt_->step(log_alpha_);
    }
    diag.alpha = this->alpha();

    polyak(cfg_.tau);
    ++updates_;
    return diag;
  }

  // target <- tau * live + (1 - tau) * target
  void polyak(double tau) {
    for (std::size_t i = 0; i < live_.size(); ++i) {
      auto& t = target_[i].value.values();
      const auto& l = live_[i].value.values();
      for (std::size_t j = 0; j < t.size(); ++j) t[j] = tau * l[j] + (1.0 - tau) * t[j];
    }
  }

 private:
  static double mean_of(const Tensor& t) {
    double s = 0.0;
    for (double v : t.values()) s += v;
    return t.size() ? s / static_cast<double>(t.size()) : 0.0;
  }

  SacConfig cfg_;
  std::size_t d_ = 0, d_a_ = 0, tokens_ = 0;
  nn::ParamStore live_, target_, log_alpha_;
  QNet q_[2];
  std::unique_ptr<nn::Adam> critic_opt_, actor_opt_, alpha_opt_;
  std::size_t updates_ = 0;
};

inline SacDiagnostics sacfd_update(const ReplayBuffer& online, const DemoBuffer& demo, PolicyNet& net,
                                   SacfdLearner& learner, Rng& rng) {
  return learner.update(online, demo, net, rng);
}

}  // namespace irevla::algos
