#pragma once

#include <cstddef>
#include <vector>

#include "irevla/core/errors.hpp"
#include "irevla/nn/tensor.hpp"

namespace irevla::algos {

using nn::Tensor;

// Latent-space transition: backbone token latents for the observation and the
// next observation.
struct LatentTransition {
  Tensor latent;       // [m x d]
  Tensor action;       // squashed action actually executed
  double reward = 0.0;
  Tensor next_latent;  // [m x d]
  bool done = false;
};

// Fixed-capacity FIFO ring buffer.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ContractError("replay buffer capacity must be positive");
  }

  void push(LatentTransition t) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(t));
    } else {
      items_[cursor_] = std::move(t);
    }
    cursor_ = (cursor_ + 1) % capacity_;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t cursor() const { return cursor_; }
  bool empty() const { return items_.empty(); }
  const LatentTransition& operator[](std::size_t i) const { return items_[i]; }

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::vector<LatentTransition> items_;
};

// Demonstration buffer: a replay buffer that only admits transitions coming
// from successful trajectories.
class DemoBuffer {
 public:
  explicit DemoBuffer(std::size_t capacity) : buf_(capacity) {}

  // `episode` must be the full latent trace of a successful trajectory.
  void add_successful_episode(const std::vector<LatentTransition>& episode) {
    if (episode.empty() || episode.back().reward != 1.0 || !episode.back().done)
      throw ContractError("demonstration buffer only accepts successful trajectories");
    for (const auto& t : episode) buf_.push(t);
    ++episodes_;
  }

  std::size_t size() const { return buf_.size(); }
  std::size_t episodes() const { return episodes_; }
  bool empty() const { return buf_.empty(); }
  const LatentTransition& operator[](std::size_t i) const { return buf_[i]; }

 private:
  ReplayBuffer buf_;
  std::size_t episodes_ = 0;
};

}  // namespace irevla::algos
