#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "irevla/core/errors.hpp"
#include "irevla/core/rng.hpp"
#include "irevla/env/trajectory.hpp"
#include "irevla/model/freeze.hpp"
#include "irevla/model/policy_net.hpp"
#include "irevla/nn/losses.hpp"
#include "irevla/nn/optim.hpp"

namespace irevla::pipeline {

using model::PolicyNet;
using nn::Tensor;

// One (observation-with-instruction, action) regression pair.
struct Sample {
  const Tensor* obs = nullptr;
  const Tensor* action = nullptr;
};

// Samples grouped by task id; the unit of balanced sampling.
class SampleSet {
 public:
  void add(const env::Trajectory& t) {
    auto& v = by_task_[t.task_id];
    for (const auto& s : t.steps) v.push_back(Sample{&s.obs, &s.action});
  }
  void add_all(const std::vector<env::Trajectory>& ts) {
    for (const auto& t : ts) add(t);
  }
  const std::map<std::string, std::vector<Sample>>& by_task() const { return by_task_; }
  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [k, v] : by_task_) n += v.size();
    return n;
  }
  bool empty() const { return size() == 0; }

 private:
  std::map<std::string, std::vector<Sample>> by_task_;
};

struct SupervisedConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::size_t patience = 5;          // epochs without relative improvement before stopping
  double min_rel_improvement = 1e-3;
  model::Squash squash = model::Squash::Clamp;
  bool anneal = false;  // cosine decay of lr to zero over `epochs`
};

struct SupervisedReport {
  std::vector<double> epoch_loss;
  double initial_loss = 0.0;  // full-data objective before the first update
  std::size_t epochs_run = 0;
  bool early_stopped = false;
};

// One epoch of task-balanced indices: every task contributes the same number
// of samples, ceil(total / tasks), cycling through a fresh permutation of its
// own samples as often as needed. The concatenation is then shuffled.
inline std::vector<Sample> balanced_epoch(const SampleSet& set, Rng& rng) {
  std::vector<Sample> out;
  const std::size_t tasks = set.by_task().size();
  if (tasks == 0) return out;
  const std::size_t quota = (set.size() + tasks - 1) / tasks;
  for (const auto& [id, samples] : set.by_task()) {
    std::vector<std::size_t> perm(samples.size());
    std::size_t taken = 0;
    while (taken < quota) {
      for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
      std::shuffle(perm.begin(), perm.end(), rng);
      for (std::size_t i = 0; i < perm.size() && taken < quota; ++i, ++taken) out.push_back(samples[perm[i]]);
    }
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

inline Tensor pack_obs(const std::vector<Sample>& batch, std::size_t begin, std::size_t end) {
  const Tensor& first = *batch[begin].obs;
  Tensor out({(end - begin) * first.rows(), first.cols()});
  double* dst = out.data();
  for (std::size_t i = begin; i < end; ++i) dst = std::copy(batch[i].obs->data(), batch[i].obs->data() + first.size(), dst);
  return out;
}

inline Tensor pack_actions(const std::vector<Sample>& batch, std::size_t begin, std::size_t end) {
  const std::size_t d_a = batch[begin].action->size();
  Tensor out({end - begin, d_a});
  double* dst = out.data();
  for (std::size_t i = begin; i < end; ++i) dst = std::copy(batch[i].action->data(), batch[i].action->data() + d_a, dst);
  return out;
}

// Records pi(o, l) for a packed batch and returns the regression loss.
inline nn::Var regression_loss(nn::Tape& tape, PolicyNet& net, const Tensor& obs, const Tensor& actions,
                               model::Squash squash) {
  nn::Var h = net.encode(tape, tape.constant(obs));
  nn::Var pred = net.action_mean(tape, net.pool_actor(tape, h));
  if (squash == model::Squash::Tanh) pred = nn::tanh(pred);
  return nn::mse_batch_loss(pred, tape.constant(actions));
}

// Mean-squared imitation objective over every sample (no sampling), with
// gradients accumulated into the network's parameters when `with_grad`.
inline double supervised_objective(PolicyNet& net, const SampleSet& set, bool with_grad,
                                   model::Squash squash = model::Squash::Clamp, std::size_t chunk = 256) {
  std::vector<Sample> all;
  for (const auto& [id, v] : set.by_task()) all.insert(all.end(), v.begin(), v.end());
  if (all.empty()) throw DimensionError("supervised objective over an empty dataset");
  double total = 0.0;
  for (std::size_t b = 0; b < all.size(); b += chunk) {
    const std::size_t e = std::min(all.size(), b + chunk);
    nn::Tape tape;
    nn::Var loss = regression_loss(tape, net, pack_obs(all, b, e), pack_actions(all, b, e), squash);
    const double w = static_cast<double>(e - b) / static_cast<double>(all.size());
    total += w * loss.item();
    if (with_grad) tape.backward(nn::scale(loss, w));
  }
  return total;
}

// Minimizes the imitation objective with the parameter trainability already
// set on `net`. `on_epoch(epoch, loss)` runs after every epoch.
inline SupervisedReport train_supervised(PolicyNet& net, const SampleSet& data, const SupervisedConfig& cfg,
                                         std::uint64_t seed,
                                         const std::function<void(std::size_t, double)>& on_epoch = {}) {
  if (data.empty()) throw ContractError("supervised training needs a nonempty dataset");
  SupervisedReport rep;
  nn::Adam opt(net.params(), nn::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, 0.0});
  Rng rng(seed);
  rep.initial_loss = supervised_objective(net, data, false, cfg.squash);
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  std::size_t step = 0, total_steps = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = balanced_epoch(data, rng);
    if (total_steps == 0) total_steps = cfg.epochs * ((order.size() + cfg.batch_size - 1) / cfg.batch_size);
    double acc = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size, ++step) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      if (cfg.anneal)
        opt.set_lr(cfg.lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total_steps))));
      nn::Tape tape;
      nn::Var loss = regression_loss(tape, net, pack_obs(order, b, e), pack_actions(order, b, e), cfg.squash);
      if (!std::isfinite(loss.item())) throw DivergenceError("supervised loss is not finite");
      tape.backward(loss);
      opt.step(net.params());
      acc += loss.item();
      ++batches;
    }
    const double epoch_loss = acc / static_cast<double>(batches);
    rep.epoch_loss.push_back(epoch_loss);
    rep.epochs_run = epoch + 1;
    if (on_epoch) on_epoch(epoch, epoch_loss);
    if (epoch_loss < best * (1.0 - cfg.min_rel_improvement)) {
      best = epoch_loss;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      rep.early_stopped = true;
      break;
    }
  }
  return rep;
}

}  // namespace irevla::pipeline
