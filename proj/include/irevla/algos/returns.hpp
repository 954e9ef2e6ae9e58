#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "irevla/core/errors.hpp"

namespace irevla::algos {

// Returns-to-go G_t = sum_{k>=t} gamma^(k-t) r_k, restarted after every done.
inline std::vector<double> discounted_return(std::span<const double> rewards, double gamma,
                                             const std::vector<bool>& dones = {}) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ContractError("discounted_return: gamma must lie in (0, 1]");
  if (!dones.empty() && dones.size() != rewards.size()) throw DimensionError("discounted_return: dones length");
  std::vector<double> out(rewards.size());
  double g = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    if (!dones.empty() && dones[i]) g = 0.0;
    g = rewards[i] + gamma * g;
    out[i] = g;
  }
  return out;
}

// Generalized advantage estimation over one rollout segment.
//   delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t
//   A_t     = delta_t + gamma lambda (1 - done_t) A_{t+1}
// V_{T} for the step after the segment is `bootstrap_value` (used only if the
// final step is not done).
inline std::vector<double> gae_advantages(std::span<const double> rewards, std::span<const double> values,
                                          const std::vector<bool>& dones, double gamma, double lambda,
                                          double bootstrap_value = 0.0) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) throw DimensionError("gae_advantages: column lengths differ");
  std::vector<double> adv(n);
  double next_adv = 0.0;
  double next_value = bootstrap_value;
  for (std::size_t i = n; i-- > 0;) {
    const double nonterminal = dones[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * next_value * nonterminal - values[i];
    next_adv = delta + gamma * lambda * nonterminal * next_adv;
    adv[i] = next_adv;
    next_value = values[i];
  }
  return adv;
}

}  // namespace irevla::algos
