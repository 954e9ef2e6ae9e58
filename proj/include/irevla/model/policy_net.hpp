#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "irevla/core/errors.hpp"
#include "irevla/core/rng.hpp"
#include "irevla/nn/autodiff.hpp"
#include "irevla/nn/layers.hpp"
#include "irevla/nn/losses.hpp"
#include "irevla/nn/param_store.hpp"

namespace irevla::model {

using nn::Group;
using nn::Tape;
using nn::Tensor;
using nn::Var;

struct ModelConfig {
  std::size_t d_in = 16;    // token width of the observation
  std::size_t tokens = 4;   // m; the last token slot carries the instruction
  std::size_t d = 64;       // latent width
  std::size_t blocks = 2;
  std::size_t hidden = 64;  // head MLP width
  std::size_t d_a = 3;
  std::size_t lora_rank = 4;
  double lora_alpha = 8.0;
  double log_std_init = -1.0;
  double log_std_min = -5.0;
  double log_std_max = 2.0;
  std::uint64_t seed = 0;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Squashing applied to the Gaussian head: clamp on the PPO path, tanh on the
// SACfD path.
enum class Squash : std::uint8_t { Clamp, Tanh };

enum class ActionMode : std::uint8_t { Deterministic, Stochastic };

struct ActionSample {
  Tensor action;      // squashed, in [-1, 1]
  Tensor pre_squash;  // u, the Gaussian sample (equals the mean when deterministic)
  double logprob = 0.0;
};

inline double squash_value(double u, Squash s) { return s == Squash::Clamp ? std::clamp(u, -1.0, 1.0) : std::tanh(u); }

// Desk-scale vision-language-action analogue:
//   tokens [m x d_in] -> backbone (LoRA-wrapped linears, token mixing) -> h [m x d]
//   h -> actor token learner -> h'_a -> action head (mean, log_std)
//   h -> critic token learner -> h'_c -> critic head (value)
// Token batches are stored as (N*m) x width matrices.
class PolicyNet {
 public:
  struct Block {
    std::size_t mixer = 0;
    nn::LoRALinear fc1, fc2;
  };

  explicit PolicyNet(ModelConfig cfg) : cfg_(cfg) {
    if (cfg_.tokens < 1 || cfg_.d < 1 || cfg_.d_in < 1 || cfg_.d_a < 1 || cfg_.hidden < 1)
      throw ContractError("PolicyNet: all dimensions must be positive");
    Rng rng(derive_seed(cfg_.seed, {0x6261636bULL}));
    const auto r = cfg_.lora_rank;
    const auto a = cfg_.lora_alpha;
    embed_ = nn::LoRALinear::create(store_, "backbone.embed", cfg_.d_in, cfg_.d, r, a, Group::Base, rng);
    pos_ = store_.add("backbone.pos", nn::random_normal({cfg_.tokens, cfg_.d}, 0.1, rng), Group::Base);
    for (std::size_t b = 0; b < cfg_.blocks; ++b) {
      const std::string p = "backbone.block" + std::to_string(b);
      Block blk;
      blk.mixer = store_.add(p + ".mix", nn::random_normal({cfg_.tokens, cfg_.tokens},
                                                           0.5 / static_cast<double>(cfg_.tokens), rng),
                             Group::Base);
      blk.fc1 = nn::LoRALinear::create(store_, p + ".fc1", cfg_.d, cfg_.d, r, a, Group::Base, rng);
      blk.fc2 = nn::LoRALinear::create(store_, p + ".fc2", cfg_.d, cfg_.d, r, a, Group::Base, rng, 0.5);
      blocks_.push_back(blk);
    }
    out_ = nn::LoRALinear::create(store_, "backbone.out", cfg_.d, cfg_.d, r, a, Group::Base, rng);

    Rng head_rng(derive_seed(cfg_.seed, {0x68656164ULL}));
    actor_query_ = store_.add("actor.query", nn::random_normal({cfg_.d}, 0.1, head_rng), Group::Head);
    actor_fc1_ = nn::Linear::create(store_, "actor.fc1", cfg_.d, cfg_.hidden, Group::Head, head_rng);
    actor_fc2_ = nn::Linear::create(store_, "actor.fc2", cfg_.hidden, cfg_.d_a, Group::Head, head_rng, 0.1);
    log_std_ = store_.add("actor.log_std", Tensor({cfg_.d_a}, cfg_.log_std_init), Group::Head);

    critic_query_ = store_.add("critic.query", Tensor::zeros({cfg_.d}), Group::Head);
    critic_fc1_ = nn::Linear::create(store_, "critic.fc1", cfg_.d, cfg_.hidden, Group::Head, head_rng);
    critic_fc2_ = nn::Linear::create(store_, "critic.fc2", cfg_.hidden, 1, Group::Head, head_rng);
    reinit_critic(derive_seed(cfg_.seed, {0x63726974ULL}));
  }

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }

  std::size_t critic_param_begin() const { return critic_query_; }

  // ---------------------------------------------------------------- taped

  // tokens: (N*m) x d_in with the instruction already in slot m-1.
  Var encode(Tape& tape, Var tokens) {
    const Tensor& X = tokens.value();
    if (X.cols() != cfg_.d_in || X.rows() % cfg_.tokens != 0)
      throw DimensionError("encode: token matrix " + nn::shape_str(X.shape()) + " incompatible with m=" +
                           std::to_string(cfg_.tokens) + ", d_in=" + std::to_string(cfg_.d_in));
    const std::size_t n = X.rows() / cfg_.tokens;
    Var h = embed_.forward(tape, store_, tokens);
    h = nn::reshape(nn::add_row(nn::reshape(h, {n, cfg_.tokens * cfg_.d}),
                                nn::reshape(tape.param(store_[pos_]), {cfg_.tokens * cfg_.d})),
                    {n * cfg_.tokens, cfg_.d});
    for (const Block& blk : blocks_) {
      h = nn::add(h, nn::token_mix(h, tape.param(store_[blk.mixer]), cfg_.tokens));
      h = nn::add(h, blk.fc2.forward(tape, store_, nn::tanh(blk.fc1.forward(tape, store_, h))));
    }
    return out_.forward(tape, store_, h);
  }

  Var pool_actor(Tape& tape, Var h) { return nn::attn_pool(h, tape.param(store_[actor_query_]), cfg_.tokens); }
  Var pool_critic(Tape& tape, Var h) { return nn::attn_pool(h, tape.param(store_[critic_query_]), cfg_.tokens); }

  // h'_a [N x d] -> unsquashed mean [N x d_a]
  Var action_mean(Tape& tape, Var h_prime) {
    return actor_fc2_.forward(tape, store_, nn::tanh(actor_fc1_.forward(tape, store_, h_prime)));
  }

  Var log_std(Tape& tape) { return nn::clamp(tape.param(store_[log_std_]), cfg_.log_std_min, cfg_.log_std_max); }

  // h'_c [N x d] -> [N]
  Var value(Tape& tape, Var h_prime_critic) {
    Var v = critic_fc2_.forward(tape, store_, nn::tanh(critic_fc1_.forward(tape, store_, h_prime_critic)));
    return nn::reshape(v, {v.value().rows()});
  }

  // Places the instruction embedding in the designated token slot.
  Tensor with_instruction(const Tensor& obs_tokens, const Tensor& instr) const {
    if (obs_tokens.rows() != cfg_.tokens || obs_tokens.cols() != cfg_.d_in)
      throw DimensionError("observation tokens " + nn::shape_str(obs_tokens.shape()) + ", expected [" +
                           std::to_string(cfg_.tokens) + "x" + std::to_string(cfg_.d_in) + "]");
    if (instr.size() != cfg_.d_in)
      throw DimensionError("instruction embedding length " + std::to_string(instr.size()));
    Tensor t = obs_tokens.reshaped({cfg_.tokens, cfg_.d_in});
    for (std::size_t k = 0; k < cfg_.d_in; ++k) t.at(cfg_.tokens - 1, k) = instr[k];
    return t;
  }

  // ------------------------------------------------------------ untaped

  Tensor encode(const Tensor& obs_tokens, const Tensor& instr) {
    return encode_batch(with_instruction(obs_tokens, instr));
  }

  // tokens (N*m) x d_in -> h (N*m) x d
  Tensor encode_batch(const Tensor& tokens) {
    Tape tape;
    ++backbone_forwards_;
    return encode(tape, tape.constant(tokens)).value();
  }

  static Tensor pool_tokens(const Tensor& h, const Tensor& query) {
    Tape tape;
    return nn::attn_pool(tape.constant(h), tape.constant(query), h.rows()).value().reshaped({h.cols()});
  }

  Tensor pool_actor(const Tensor& h) {
    Tape tape;
    return pool_actor(tape, tape.constant(h)).value();
  }
  Tensor pool_critic(const Tensor& h) {
    Tape tape;
    return pool_critic(tape, tape.constant(h)).value();
  }

  Tensor action_mean(const Tensor& h_prime) {
    Tape tape;
    return action_mean(tape, tape.constant(h_prime.reshaped({h_prime.size() / cfg_.d, cfg_.d}))).value();
  }

  Tensor log_std_values() const {
    Tensor l = store_[log_std_].value;
    for (auto& v : l.values()) v = std::clamp(v, cfg_.log_std_min, cfg_.log_std_max);
    return l;
  }

  ActionSample sample_action(const Tensor& h_prime, ActionMode mode, std::uint64_t rng_seed,
                             Squash squash = Squash::Clamp) {
    Rng rng(rng_seed);
    return sample_action(h_prime, mode, rng, squash);
  }

  ActionSample sample_action(const Tensor& h_prime, ActionMode mode, Rng& rng, Squash squash = Squash::Clamp) {
    Tensor mean = action_mean(h_prime).reshaped({cfg_.d_a});
    Tensor log_std = log_std_values();
    ActionSample s;
    s.pre_squash = mean;
    if (mode == ActionMode::Stochastic)
      for (std::size_t j = 0; j < cfg_.d_a; ++j) s.pre_squash[j] = mean[j] + std::exp(log_std[j]) * standard_normal(rng);
    s.action = s.pre_squash;
    for (auto& v : s.action.values()) v = squash_value(v, squash);
    s.logprob = nn::gaussian_logprob(s.pre_squash, mean, log_std, squash == Squash::Tanh);
    return s;
  }

  double estimate_value(const Tensor& h_prime_critic) {
    Tape tape;
    return value(tape, tape.constant(h_prime_critic.reshaped({1, cfg_.d}))).item();
  }

  // --------------------------------------------------------- management

  // Re-draws the critic token learner and critic head from `seed`, resets the
  // policy log-std, and leaves every other parameter untouched.
  void reinit_critic(std::uint64_t seed) {
    Rng rng(derive_seed(seed, {0x72656e69ULL}));
    store_[critic_query_].value = nn::random_normal({cfg_.d}, 0.1, rng);
    store_[critic_fc1_.weight].value = nn::fan_in_uniform(cfg_.hidden, cfg_.d, rng);
    store_[critic_fc1_.bias].value = Tensor::zeros({cfg_.hidden});
    store_[critic_fc2_.weight].value = nn::fan_in_uniform(1, cfg_.hidden, rng);
    store_[critic_fc2_.bias].value = Tensor::zeros({1});
    store_[log_std_].value = Tensor({cfg_.d_a}, cfg_.log_std_init);
    store_.zero_grad();
  }

  // Bitwise weight copy; trainable flags and gradients are not transferred.
  void copy_weights_from(const PolicyNet& src) {
    if (!(src.cfg_ == cfg_) || !src.store_.same_layout(store_))
      throw ContractError("copy_weights: architecture mismatch");
    for (std::size_t i = 0; i < store_.size(); ++i) store_[i].value = src.store_[i].value;
    store_.zero_grad();
  }

  // Zeroes every adapter up-projection B, returning the adapters to the
  // identity delta while keeping their down-projections.
  void reset_adapters() {
    for (auto& p : store_)
      if (p.group == Group::Lora && p.id.ends_with(".lora_B")) p.value.fill(0.0);
  }

  std::uint64_t backbone_digest() const { return store_.digest({Group::Base, Group::Lora}); }
  std::uint64_t base_digest() const { return store_.digest({Group::Base}); }
  std::uint64_t lora_digest() const { return store_.digest({Group::Lora}); }
  std::uint64_t head_digest() const { return store_.digest({Group::Head}); }

  bool backbone_frozen() const {
    for (const auto& p : store_)
      if (p.group != Group::Head && p.trainable) return false;
    return true;
  }

  // Instrumentation: number of untaped backbone forward passes.
  std::uint64_t backbone_forwards() const { return backbone_forwards_; }

  // Index helpers for layers that need direct access (tests, critics).
  const nn::LoRALinear& out_projection() const { return out_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  std::size_t log_std_index() const { return log_std_; }
  std::size_t actor_query_index() const { return actor_query_; }
  std::size_t critic_query_index() const { return critic_query_; }
  const nn::Linear& critic_output() const { return critic_fc2_; }

 private:
  ModelConfig cfg_;
  nn::ParamStore store_;
  nn::LoRALinear embed_;
  std::size_t pos_ = 0;
  std::vector<Block> blocks_;
  nn::LoRALinear out_;
  std::size_t actor_query_ = 0;
  nn::Linear actor_fc1_, actor_fc2_;
  std::size_t log_std_ = 0;
  std::size_t critic_query_ = 0;
  nn::Linear critic_fc1_, critic_fc2_;
  std::uint64_t backbone_forwards_ = 0;
};

}  // namespace irevla::model
