#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "irevla/algos/rollout.hpp"
#include "irevla/nn/autodiff.hpp"
#include "irevla/nn/optim.hpp"

namespace irevla::algos {

struct PpoConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  std::size_t epochs = 4;
  std::size_t minibatch = 64;
  std::size_t rollout_steps = 2048;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  double lr = 3e-4;
};

struct PpoDiagnostics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
  double mean_ratio = 0.0;
  double surrogate = 0.0;
  std::size_t minibatches = 0;
};

namespace detail {

inline Tensor stack(const std::vector<Tensor>& col, const std::vector<std::size_t>& idx, std::size_t begin,
                    std::size_t end) {
  const Tensor& first = col[idx[begin]];
  const std::size_t r = first.rows(), c = first.cols();
  Tensor out({(end - begin) * r, c});
  double* dst = out.data();
  for (std::size_t i = begin; i < end; ++i) {
    const Tensor& t = col[idx[i]];
    dst = std::copy(t.data(), t.data() + t.size(), dst);
  }
  return out;
}

inline Tensor gather(const std::vector<double>& col, const std::vector<std::size_t>& idx, std::size_t begin,
                     std::size_t end) {
  Tensor out({end - begin});
  for (std::size_t i = begin; i < end; ++i) out[i - begin] = col[idx[i]];
  return out;
}

struct PpoTerms {
  nn::Var loss, policy_loss, value_loss, entropy, ratio, surrogate;
};

// Records the PPO objective for the samples idx[begin, end). With a frozen
// backbone the stored latents are reused; otherwise the observations are
// re-encoded on the tape so gradients reach the backbone.
inline PpoTerms ppo_terms(nn::Tape& tape, PolicyNet& net, const RolloutBatch& b, const std::vector<std::size_t>& idx,
                          std::size_t begin, std::size_t end, const PpoConfig& cfg) {
  nn::Var h = net.backbone_frozen() ? tape.constant(stack(b.latent, idx, begin, end))
                                    : net.encode(tape, tape.constant(stack(b.obs, idx, begin, end)));
  nn::Var mean = net.action_mean(tape, net.pool_actor(tape, h));
  nn::Var log_std = net.log_std(tape);
  nn::Var logp = nn::gaussian_logprob(tape.constant(stack(b.action, idx, begin, end)), mean, log_std);
  nn::Var ratio = nn::exp(nn::sub(logp, tape.constant(gather(b.logprob_old, idx, begin, end))));
  nn::Var adv = tape.constant(gather(b.advantage, idx, begin, end));
  nn::Var surr = nn::minimum(nn::mul(ratio, adv), nn::mul(nn::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), adv));
  nn::Var surrogate = nn::mean(surr);
  nn::Var v = net.value(tape, net.pool_critic(tape, h));
  nn::Var value_loss = nn::mean(nn::square(nn::sub(v, tape.constant(gather(b.returns, idx, begin, end)))));
  nn::Var entropy = nn::gaussian_entropy(log_std);
  nn::Var policy_loss = nn::scale(surrogate, -1.0);
  nn::Var loss = nn::sub(nn::add(policy_loss, nn::scale(value_loss, cfg.value_coef)), nn::scale(entropy, cfg.entropy_coef));
  return {loss, policy_loss, value_loss, entropy, ratio, surrogate};
}

inline double clipped_fraction(const Tensor& ratio, double clip) {
  std::size_t n = 0;
  for (double r : ratio.values()) n += std::abs(r - 1.0) > clip;
  return static_cast<double>(n) / static_cast<double>(ratio.size());
}

}  // namespace detail

inline nn::Adam make_ppo_optimizer(const PolicyNet& net, const PpoConfig& cfg) {
  return nn::Adam(net.params(), nn::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.max_grad_norm});
}

// Importance ratios and surrogate of the current parameters on a prepared
// batch, without any update.
inline PpoDiagnostics ppo_ratio_diagnostics(const RolloutBatch& batch, PolicyNet& net, const PpoConfig& cfg) {
  if (batch.advantage.size() != batch.size()) throw ContractError("ppo: batch not prepared");
  std::vector<std::size_t> idx(batch.size());
  std::iota(idx.begin(), idx.end(), 0);
  nn::Tape tape;
  auto t = detail::ppo_terms(tape, net, batch, idx, 0, idx.size(), cfg);
  PpoDiagnostics d;
  d.policy_loss = t.policy_loss.item();
  d.value_loss = t.value_loss.item();
  d.entropy = t.entropy.item();
  d.surrogate = t.surrogate.item();
  d.clip_frac = detail::clipped_fraction(t.ratio.value(), cfg.clip);
  const auto& r = t.ratio.value().values();
  d.mean_ratio = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
  return d;
}

// cfg.epochs passes of shuffled minibatch updates of the clipped objective.
// Parameters not marked trainable are never modified.
inline PpoDiagnostics ppo_update(RolloutBatch& batch, PolicyNet& net, const PpoConfig& cfg, nn::Adam& opt,
                                 std::uint64_t seed) {
  if (batch.size() == 0) throw ContractError("ppo_update on an empty batch");
  if (batch.advantage.size() != batch.size()) batch.prepare(cfg.gamma, cfg.lambda);
  batch.check_columns();
  Rng rng(derive_seed(seed, {0x70706fULL}));
  std::vector<std::size_t> idx(batch.size());
  std::iota(idx.begin(), idx.end(), 0);
  PpoDiagnostics d;
  double ratio_sum = 0.0, clip_sum = 0.0;
  std::size_t ratio_n = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t b = 0; b < idx.size(); b += cfg.minibatch) {
      const std::size_t e = std::min(idx.size(), b + cfg.minibatch);
      nn::Tape tape;
      auto t = detail::ppo_terms(tape, net, batch, idx, b, e, cfg);
      for (const nn::Var* v : {&t.loss, &t.policy_loss, &t.value_loss})
        if (!std::isfinite(v->item()))
          throw DivergenceError("ppo: non-finite loss (policy " + std::to_string(t.policy_loss.item()) + ", value " +
                                std::to_string(t.value_loss.item()) + ") in epoch " + std::to_string(epoch));
      tape.backward(t.loss);
      opt.step(net.params());
      d.policy_loss += t.policy_loss.item();
      d.value_loss += t.value_loss.item();
      d.entropy += t.entropy.item();
      d.surrogate += t.surrogate.item();
      const Tensor& r = t.ratio.value();
      for (double x : r.values()) ratio_sum += x;
      ratio_n += r.size();
      clip_sum += detail::clipped_fraction(r, cfg.clip) * static_cast<double>(r.size());
      ++d.minibatches;
    }
  }
  const double m = static_cast<double>(d.minibatches);
  d.policy_loss /= m;
  d.value_loss /= m;
  d.entropy /= m;
  d.surrogate /= m;
  d.mean_ratio = ratio_sum / static_cast<double>(ratio_n);
  d.clip_frac = clip_sum / static_cast<double>(ratio_n);
  return d;
}

}  // namespace irevla::algos
