#include <gtest/gtest.h>

#include <cmath>

#include "irevla/model/checkpoint.hpp"
#include "irevla/model/freeze.hpp"
#include "support.hpp"

using namespace irevla;
using namespace irevla::model;
using nn::Group;
using nn::Tensor;

namespace {

Tensor random_obs(const ModelConfig& mc, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({n * mc.tokens, mc.d_in});
  for (auto& v : t.values()) v = uniform(rng, -1, 1);
  return t;
}

}  // namespace

TEST(PolicyNet, AnalyticGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto r = fixtures::policy_gradient_check(seed);
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed << " worst " << r.worst;
    EXPECT_EQ(r.entries, fixtures::random_policy(seed).params().count(Group::Base) +
                             fixtures::random_policy(seed).params().count(Group::Lora) +
                             fixtures::random_policy(seed).params().count(Group::Head));
  }
}

TEST(PolicyNet, SameSeedSameWeights) {
  ModelConfig mc;
  mc.seed = 11;
  PolicyNet a(mc), b(mc);
  EXPECT_EQ(a.params().digest(), b.params().digest());
  mc.seed = 12;
  EXPECT_NE(PolicyNet(mc).params().digest(), a.params().digest());
}

TEST(PolicyNet, ParameterGroupsPartitionTheRegistry) {
  PolicyNet net(ModelConfig{});
  std::size_t base = 0, lora = 0, head = 0;
  for (const auto& p : net.params()) {
    if (p.id.find("lora_") != std::string::npos) {
      EXPECT_EQ(p.group, Group::Lora) << p.id;
      ++lora;
    } else if (p.id.starts_with("backbone.")) {
      EXPECT_EQ(p.group, Group::Base) << p.id;
      ++base;
    } else {
      EXPECT_EQ(p.group, Group::Head) << p.id;
      ++head;
    }
  }
  EXPECT_GT(base, 0u);
  EXPECT_GT(lora, 0u);
  EXPECT_GT(head, 0u);
}

TEST(PolicyNet, EncodeRejectsWrongShapes) {
  PolicyNet net(ModelConfig{});
  const auto& mc = net.config();
  EXPECT_THROW(net.encode_batch(Tensor::zeros({mc.tokens + 1, mc.d_in})), DimensionError);
  EXPECT_THROW(net.encode_batch(Tensor::zeros({mc.tokens, mc.d_in + 1})), DimensionError);
  EXPECT_THROW(net.with_instruction(Tensor::zeros({mc.tokens, mc.d_in}), Tensor::zeros({mc.d_in - 1})),
               DimensionError);
}

TEST(PolicyNet, BatchedEncodeEqualsPerSampleEncode) {
  PolicyNet net(ModelConfig{});
  const auto& mc = net.config();
  Tensor obs = random_obs(mc, 3, 5);
  Tensor h = net.encode_batch(obs);
  for (std::size_t n = 0; n < 3; ++n) {
    Tensor one({mc.tokens, mc.d_in});
    std::copy(obs.data() + n * one.size(), obs.data() + (n + 1) * one.size(), one.data());
    Tensor h1 = net.encode_batch(one);
    for (std::size_t k = 0; k < h1.size(); ++k) EXPECT_NEAR(h1[k], h[n * h1.size() + k], 1e-12);
  }
}

TEST(PolicyNet, InstructionGoesIntoLastTokenSlot) {
  PolicyNet net(ModelConfig{});
  const auto& mc = net.config();
  Tensor instr({mc.d_in}, 0.25);
  Tensor t = net.with_instruction(Tensor::zeros({mc.tokens, mc.d_in}), instr);
  for (std::size_t k = 0; k < mc.d_in; ++k) {
    EXPECT_EQ(t.at(mc.tokens - 1, k), 0.25);
    EXPECT_EQ(t.at(0, k), 0.0);
  }
}

TEST(PolicyNet, DeterministicActionIsTheSquashedMean) {
  PolicyNet net(ModelConfig{});
  Tensor hp = net.pool_actor(net.encode_batch(random_obs(net.config(), 1, 3)));
  Tensor mean = net.action_mean(hp);
  auto s = net.sample_action(hp, ActionMode::Deterministic, std::uint64_t{1}, Squash::Tanh);
  for (std::size_t j = 0; j < mean.size(); ++j) {
    EXPECT_EQ(s.pre_squash[j], mean[j]);
    EXPECT_EQ(s.action[j], std::tanh(mean[j]));
  }
}

TEST(PolicyNet, StochasticActionsStayInBoundsAndAreSeeded) {
  PolicyNet net(ModelConfig{});
  Tensor hp = net.pool_actor(net.encode_batch(random_obs(net.config(), 1, 3)));
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (auto sq : {Squash::Clamp, Squash::Tanh}) {
      auto a = net.sample_action(hp, ActionMode::Stochastic, seed, sq);
      auto b = net.sample_action(hp, ActionMode::Stochastic, seed, sq);
      EXPECT_TRUE(a.action.bitwise_equal(b.action));
      for (double v : a.action.values()) {
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
      }
      EXPECT_TRUE(std::isfinite(a.logprob));
    }
  }
}

TEST(PolicyNet, LogStdIsClampedToConfiguredBounds) {
  PolicyNet net(ModelConfig{});
  net.params()[net.log_std_index()].value.fill(50.0);
  Tensor hi = net.log_std_values();
  for (double v : hi.values()) EXPECT_EQ(v, net.config().log_std_max);
  net.params()[net.log_std_index()].value.fill(-50.0);
  Tensor lo = net.log_std_values();
  for (double v : lo.values()) EXPECT_EQ(v, net.config().log_std_min);
}

TEST(PolicyNet, ReinitCriticTouchesOnlyCriticAndLogStd) {
  PolicyNet net(ModelConfig{});
  net.params()[net.log_std_index()].value.fill(0.7);
  const auto backbone = net.backbone_digest();
  Fnv1a actor;
  for (const auto& p : net.params())
    if (p.id.starts_with("actor.") && p.id != "actor.log_std") nn::hash_param(actor, p);
  const auto critic_before = net.params().at("critic.fc1.W").value;
  net.reinit_critic(99);
  Fnv1a actor_after;
  for (const auto& p : net.params())
    if (p.id.starts_with("actor.") && p.id != "actor.log_std") nn::hash_param(actor_after, p);
  EXPECT_EQ(net.backbone_digest(), backbone);
  EXPECT_EQ(actor.value(), actor_after.value());
  EXPECT_FALSE(net.params().at("critic.fc1.W").value.bitwise_equal(critic_before));
  Tensor ls = net.log_std_values();
  for (double v : ls.values()) EXPECT_EQ(v, net.config().log_std_init);
  PolicyNet other(ModelConfig{});
  other.copy_weights_from(net);
  net.reinit_critic(99);
  other.reinit_critic(99);
  EXPECT_EQ(net.params().digest(), other.params().digest());
}

TEST(PolicyNet, ResetAdaptersZeroesOnlyUpProjections) {
  PolicyNet net = fixtures::random_policy(4);
  const auto base = net.base_digest();
  const auto head = net.head_digest();
  net.reset_adapters();
  for (const auto& p : net.params()) {
    if (p.id.ends_with(".lora_B")) {
      for (double v : p.value.values()) EXPECT_EQ(v, 0.0);
    }
    if (p.id.ends_with(".lora_A")) {
      double s = 0;
      for (double v : p.value.values()) s += std::abs(v);
      EXPECT_GT(s, 0.0);
    }
  }
  EXPECT_EQ(net.base_digest(), base);
  EXPECT_EQ(net.head_digest(), head);
}

TEST(PolicyNet, CopyRejectsArchitectureMismatch) {
  ModelConfig a, b;
  b.d = a.d + 8;
  PolicyNet x(a), y(b);
  EXPECT_THROW(x.copy_weights_from(y), ContractError);
}

TEST(Freeze, StageMasksMatchTheTrainabilityMatrix) {
  const Stage stages[] = {Stage::Sft0, Stage::Rl1, Stage::Sl2, Stage::Full};
  const bool expect[4][3] = {// base, lora, head
                             {true, false, true},
                             {false, false, true},
                             {false, true, true},
                             {true, true, true}};
  for (int s = 0; s < 4; ++s) {
    PolicyNet net(ModelConfig{});
    auto mask = apply_stage_freeze(net, stages[s]);
    for (const auto& p : net.params()) EXPECT_EQ(p.trainable, expect[s][static_cast<int>(p.group)]) << p.id;
    EXPECT_EQ(mask.base.size() + mask.lora.size() + mask.head.size(), net.params().size());
    EXPECT_EQ(net.backbone_frozen(), stages[s] == Stage::Rl1);
    EXPECT_EQ(parse_stage(stage_name(stages[s])), stages[s]);
  }
  EXPECT_THROW(parse_stage("RL2"), ContractError);
}

TEST(Freeze, FrozenGroupsSurviveOptimizerSteps) {
  PolicyNet net = fixtures::random_policy(6);
  apply_stage_freeze(net, Stage::Rl1);
  const auto backbone = net.backbone_digest();
  nn::Adam opt(net.params(), nn::AdamConfig{1e-2});
  for (int i = 0; i < 5; ++i) {
    nn::Tape tape;
    auto h = net.encode(tape, tape.constant(random_obs(net.config(), 2, i)));
    tape.backward(nn::sum(nn::square(net.action_mean(tape, net.pool_actor(tape, h)))));
    opt.step(net.params());
  }
  EXPECT_EQ(net.backbone_digest(), backbone);
  EXPECT_EQ(opt.updates(Group::Base), 0u);
  EXPECT_EQ(opt.updates(Group::Lora), 0u);
  EXPECT_GT(opt.updates(Group::Head), 0u);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  PolicyNet net = fixtures::random_policy(8);
  Metadata meta{{"stage", "stage1"}};
  auto bytes = serialize_checkpoint(net, meta);
  Metadata back;
  PolicyNet loaded = deserialize_checkpoint(bytes, &back);
  EXPECT_EQ(back.at("stage"), "stage1");
  EXPECT_TRUE(loaded.config() == net.config());
  for (std::size_t i = 0; i < net.params().size(); ++i)
    EXPECT_TRUE(net.params()[i].value.bitwise_equal(loaded.params()[i].value)) << net.params()[i].id;
  EXPECT_EQ(serialize_checkpoint(loaded, meta), bytes);
}

TEST(Checkpoint, FileRoundTrip) {
  auto dir = fixtures::scratch_dir("ckpt");
  PolicyNet net = fixtures::random_policy(9);
  save_checkpoint(net, dir / "a.ckpt");
  EXPECT_EQ(load_checkpoint(dir / "a.ckpt").params().digest(), net.params().digest());
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), Error);
}

TEST(Checkpoint, CorruptionIsDetected) {
  PolicyNet net(ModelConfig{});
  const auto good = serialize_checkpoint(net);
  auto kind_of = [](std::vector<std::uint8_t> b) {
    try {
      parse_checkpoint(b);
    } catch (const CheckpointError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };
  using K = CheckpointError::Kind;
  auto flipped = good;
  flipped[good.size() / 2] ^= 0x10;
  EXPECT_EQ(kind_of(flipped), static_cast<int>(K::Integrity));
  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(kind_of(magic), static_cast<int>(K::BadMagic));
  auto version = good;
  version[4] = 9;
  EXPECT_EQ(kind_of(version), static_cast<int>(K::VersionMismatch));
  EXPECT_EQ(kind_of(std::vector<std::uint8_t>(good.begin(), good.begin() + good.size() / 3)),
            static_cast<int>(K::Truncated));
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_NE(kind_of(trailing), -1);
  EXPECT_EQ(kind_of(good), -1);
}

TEST(Checkpoint, LayoutMismatchIsRejected) {
  ModelConfig small;
  small.blocks = 1;
  PolicyNet a(small), b(ModelConfig{});
  auto ck = parse_checkpoint(serialize_checkpoint(a));
  EXPECT_THROW(assign_params(b, ck), CheckpointError);
}
