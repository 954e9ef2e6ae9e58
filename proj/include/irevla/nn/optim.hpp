#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "irevla/core/errors.hpp"
#include "irevla/nn/param_store.hpp"

namespace irevla::nn {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double max_grad_norm = 0.0;  // <= 0 disables clipping
};

// Adaptive-moment optimizer bound to the parameter layout it was created for.
// Non-trainable parameters are never touched and keep zero moments.
class Adam {
 public:
  Adam(const ParamStore& params, AdamConfig cfg) : cfg_(cfg) {
    for (const auto& p : params) {
      ids_.push_back(p.id);
      m_.push_back(Tensor::zeros(p.value.shape()));
      v_.push_back(Tensor::zeros(p.value.shape()));
    }
  }

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::uint64_t steps() const { return t_; }
  const Tensor& first_moment(std::size_t i) const { return m_[i]; }
  const Tensor& second_moment(std::size_t i) const { return v_[i]; }

  // Number of tensor updates applied so far to each parameter group.
  std::uint64_t updates(Group g) const { return updates_[static_cast<std::size_t>(g)]; }

  // Global L2 norm of the trainable gradients.
  static double grad_norm(const ParamStore& params) {
    double s = 0.0;
    for (const auto& p : params)
      if (p.trainable)
        for (double g : p.grad.values()) s += g * g;
    return std::sqrt(s);
  }

  // Applies one update to trainable parameters, then clears every gradient.
  // Returns the pre-clip gradient norm.
  double step(ParamStore& params) {
    if (params.size() != ids_.size()) throw ContractError("optimizer state does not match parameter registry");
    for (std::size_t i = 0; i < ids_.size(); ++i)
      if (params[i].id != ids_[i] || params[i].value.shape() != m_[i].shape())
        throw ContractError("optimizer state does not match parameter '" + params[i].id + "'");

    const double norm = grad_norm(params);
    if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient norm");
    const double clip = (cfg_.max_grad_norm > 0.0 && norm > cfg_.max_grad_norm) ? cfg_.max_grad_norm / norm : 1.0;

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      Param& p = params[i];
      if (!p.trainable) continue;
      auto& m = m_[i].values();
      auto& v = v_[i].values();
      auto& w = p.value.values();
      const auto& g = p.grad.values();
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = g[k] * clip;
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
        w[k] -= cfg_.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.epsilon);
      }
      ++updates_[static_cast<std::size_t>(p.group)];
    }
    params.zero_grad();
    return norm;
  }

 private:
  AdamConfig cfg_;
  std::vector<std::string> ids_;
  std::vector<Tensor> m_, v_;
  std::uint64_t t_ = 0;
  std::array<std::uint64_t, 3> updates_{};
};

}  // namespace irevla::nn
