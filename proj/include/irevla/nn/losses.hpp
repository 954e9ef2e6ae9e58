#pragma once

#include <cmath>
#include <cstddef>

#include "irevla/nn/autodiff.hpp"

namespace irevla::nn {

// Mean over the batch of the per-sample squared L2 error.
inline Var mse_batch_loss(Var pred, Var target) {
  const Tensor& P = pred.value();
  const Tensor& T = target.value();
  require_same_shape(P, T, "mse_batch_loss");
  if (P.empty() || P.rows() == 0) throw DimensionError("mse_batch_loss: empty batch");
  const double n = static_cast<double>(P.rows());
  return scale(sum(square(sub(pred, target))), 1.0 / n);
}

inline double mse_batch_loss(const Tensor& pred, const Tensor& target) {
  Tape tape;
  return mse_batch_loss(tape.constant(pred), tape.constant(target)).item();
}

// Diagonal Gaussian log density of a single action. With `tanh_squashed`, the
// action is interpreted as the pre-squash sample u and the log-Jacobian of
// tanh(u) is subtracted, giving the density of tanh(u).
inline double gaussian_logprob(const Tensor& action, const Tensor& mean, const Tensor& log_std,
                               bool tanh_squashed = false) {
  require_same_shape(action, mean, "gaussian_logprob");
  if (log_std.size() != mean.size()) throw DimensionError("gaussian_logprob: log_std length");
  Tape tape;
  Shape row{1, mean.size()};
  Var a = tape.constant(action.reshaped(row));
  Var lp = gaussian_logprob(a, tape.constant(mean.reshaped(row)), tape.constant(log_std));
  if (tanh_squashed) lp = sub(lp, tanh_log_jacobian(a));
  return lp.item();
}

}  // namespace irevla::nn
