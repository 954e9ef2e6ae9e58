#pragma once

#include <cstdint>
#include <deque>
#include <unordered_map>

#include "irevla/core/digest.hpp"
#include "irevla/core/errors.hpp"
#include "irevla/model/policy_net.hpp"

namespace irevla::algos {

using model::PolicyNet;
using nn::Tensor;

inline std::uint64_t observation_digest(const Tensor& obs) {
  Fnv1a h;
  for (auto d : obs.shape()) h.update_pod(static_cast<std::uint64_t>(d));
  h.update(obs.data(), obs.size() * sizeof(double));
  return h.value();
}

struct LatentCacheEntry {
  std::uint64_t obs_digest = 0;
  Tensor latent;                    // backbone output h [m x d]
  std::uint64_t backbone_digest = 0;  // digest of base + adapter weights at encode time
};

struct CachedLatents {
  Tensor latent;         // h
  Tensor actor_pooled;   // h'_a
  Tensor critic_pooled;  // h'_c
  bool hit = false;
};

// Observation -> backbone latent cache. Entries are stamped with the backbone
// digest they were computed under; any lookup under a different digest treats
// the whole cache as stale and recomputes. The pooled views are recomputed on
// every call because the token-learner queries train in the RL stage.
class LatentCache {
 public:
  explicit LatentCache(std::size_t capacity = 16384) : capacity_(capacity) {}

  std::size_t size() const { return entries_.size(); }
  std::uint64_t hits() const { return hits_; }
  std::uint64_t misses() const { return misses_; }
  std::uint64_t invalidations() const { return invalidations_; }

  void clear() {
    entries_.clear();
    order_.clear();
  }

  // Latent for `obs` under a backbone whose digest is `live_digest`.
  const Tensor& latent(const Tensor& obs, PolicyNet& net, std::uint64_t live_digest) {
    const std::uint64_t key = observation_digest(obs);
    auto it = entries_.find(key);
    if (it != entries_.end()) {
      if (it->second.backbone_digest == live_digest) {
        ++hits_;
        return it->second.latent;
      }
      ++invalidations_;
      clear();
    }
    ++misses_;
    if (entries_.size() >= capacity_ && !order_.empty()) {
      entries_.erase(order_.front());
      order_.pop_front();
    }
    auto [pos, inserted] = entries_.emplace(key, LatentCacheEntry{key, net.encode_batch(obs), live_digest});
    order_.push_back(key);
    return pos->second.latent;
  }

  std::size_t stale_entries(std::uint64_t live_digest) const {
    std::size_t n = 0;
    for (const auto& [k, e] : entries_) n += e.backbone_digest != live_digest;
    return n;
  }

 private:
  std::size_t capacity_;
  std::unordered_map<std::uint64_t, LatentCacheEntry> entries_;
  std::deque<std::uint64_t> order_;
  std::uint64_t hits_ = 0, misses_ = 0, invalidations_ = 0;
};

// Cache-backed encode: returns h plus both pooled latents. Requires the
// backbone to be frozen so that cached latents stay valid during use.
inline CachedLatents encode_and_cache_latent(const Tensor& obs, PolicyNet& net, LatentCache& cache) {
  if (!net.backbone_frozen()) throw ContractError("latent caching requires a frozen backbone");
  const std::uint64_t before = cache.hits();
  CachedLatents out;
  out.latent = cache.latent(obs, net, net.backbone_digest());
  out.hit = cache.hits() != before;
  out.actor_pooled = net.pool_actor(out.latent);
  out.critic_pooled = net.pool_critic(out.latent);
  return out;
}

}  // namespace irevla::algos
