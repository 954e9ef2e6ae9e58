#include <gtest/gtest.h>

#include <cmath>

#include "irevla/nn/layers.hpp"
#include "irevla/nn/losses.hpp"
#include "irevla/nn/optim.hpp"
#include "support.hpp"

using namespace irevla;
using namespace irevla::nn;

namespace {

using Builder = std::function<Var(Tape&, std::vector<Var>&)>;

// Loss = sum(out * R) with a fixed random R so no gradient cancels by symmetry.
double check_op(std::vector<Tensor> inputs, const Builder& build, std::uint64_t seed = 7) {
  ParamStore store;
  for (std::size_t i = 0; i < inputs.size(); ++i) store.add("x" + std::to_string(i), inputs[i], Group::Head);
  Tensor weights;
  auto forward = [&](bool with_grad) {
    Tape tape;
    std::vector<Var> xs;
    for (auto& p : store) xs.push_back(tape.param(p));
    Var out = build(tape, xs);
    if (weights.empty()) {
      Rng rng(seed);
      weights = Tensor(out.value().shape());
      for (auto& v : weights.values()) v = uniform(rng, -1, 1);
    }
    Var loss = sum(mul(out, tape.constant(weights)));
    if (with_grad) tape.backward(loss);
    return loss.item();
  };
  auto r = fixtures::finite_difference_check(store, [&] { return forward(false); }, [&] { forward(true); }, 1e-3, 1e-6);
  return r.max_rel_error;
}

Tensor rand_tensor(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  Tensor t(std::move(s));
  for (auto& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

constexpr double kTol = 1e-6;

}  // namespace

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor::zeros({2, 3}).reshaped({4, 2}), DimensionError);
  EXPECT_THROW(Tensor::zeros({2}).item(), DimensionError);
}

TEST(Tensor, BitwiseEqualityDistinguishesSignedZero) {
  Tensor a = Tensor::vector({0.0});
  Tensor b = Tensor::vector({-0.0});
  EXPECT_FALSE(a.bitwise_equal(b));
  EXPECT_TRUE(a.bitwise_equal(a));
}

TEST(Autodiff, MatmulAndLinearGradients) {
  EXPECT_LT(check_op({rand_tensor({3, 4}, 1), rand_tensor({4, 2}, 2)}, [](Tape&, auto& x) { return matmul(x[0], x[1]); }),
            kTol);
  EXPECT_LT(check_op({rand_tensor({5, 4}, 3), rand_tensor({3, 4}, 4), rand_tensor({3}, 5)},
                     [](Tape&, auto& x) { return linear(x[0], x[1], x[2]); }),
            kTol);
}

TEST(Autodiff, ElementwiseGradients) {
  auto a = rand_tensor({3, 3}, 11);
  auto b = rand_tensor({3, 3}, 12);
  EXPECT_LT(check_op({a}, [](Tape&, auto& x) { return nn::tanh(x[0]); }), kTol);
  EXPECT_LT(check_op({a}, [](Tape&, auto& x) { return nn::exp(x[0]); }), kTol);
  EXPECT_LT(check_op({a}, [](Tape&, auto& x) { return square(x[0]); }), kTol);
  EXPECT_LT(check_op({a}, [](Tape&, auto& x) { return scale(x[0], -2.5); }), kTol);
  EXPECT_LT(check_op({a}, [](Tape&, auto& x) { return add_scalar(x[0], 0.3); }), kTol);
  EXPECT_LT(check_op({a}, [](Tape&, auto& x) { return clamp(x[0], -2.0, 2.0); }), kTol);
  EXPECT_LT(check_op({rand_tensor({3, 3}, 13, 0.1, 1.0)}, [](Tape&, auto& x) { return relu(x[0]); }), kTol);
  EXPECT_LT(check_op({a, b}, [](Tape&, auto& x) { return add(x[0], x[1]); }), kTol);
  EXPECT_LT(check_op({a, b}, [](Tape&, auto& x) { return sub(x[0], x[1]); }), kTol);
  EXPECT_LT(check_op({a, b}, [](Tape&, auto& x) { return mul(x[0], x[1]); }), kTol);
  Tensor apart = a;  // keep the operands clear of the kink at a == b
  for (std::size_t i = 0; i < apart.size(); ++i) apart[i] += (i % 2 ? 0.5 : -0.5);
  EXPECT_LT(check_op({a, apart}, [](Tape&, auto& x) { return minimum(x[0], x[1]); }), kTol);
}

TEST(Autodiff, BroadcastAndReductionGradients) {
  auto m = rand_tensor({4, 3}, 21);
  auto v = rand_tensor({3}, 22);
  EXPECT_LT(check_op({m, v}, [](Tape&, auto& x) { return add_row(x[0], x[1]); }), kTol);
  EXPECT_LT(check_op({m, v}, [](Tape&, auto& x) { return mul_row(x[0], x[1]); }), kTol);
  EXPECT_LT(check_op({m, rand_tensor({1}, 23)}, [](Tape&, auto& x) { return mul_scalar(x[0], x[1]); }), kTol);
  EXPECT_LT(check_op({m}, [](Tape&, auto& x) { return row_sum(x[0]); }), kTol);
  EXPECT_LT(check_op({m}, [](Tape&, auto& x) { return mean(x[0]); }), kTol);
  EXPECT_LT(check_op({m}, [](Tape&, auto& x) { return reshape(x[0], {2, 6}); }), kTol);
  EXPECT_LT(check_op({m, rand_tensor({4, 2}, 24)}, [](Tape&, auto& x) { return concat_cols(x[0], x[1]); }), kTol);
  EXPECT_LT(check_op({m}, [](Tape&, auto& x) { return softmax_rows(x[0]); }), kTol);
}

TEST(Autodiff, TokenOpsGradients) {
  // two samples of m = 3 tokens, width 4
  auto h = rand_tensor({6, 4}, 31);
  EXPECT_LT(check_op({h, rand_tensor({3, 3}, 32)}, [](Tape&, auto& x) { return token_mix(x[0], x[1], 3); }), kTol);
  EXPECT_LT(check_op({h, rand_tensor({4}, 33)}, [](Tape&, auto& x) { return attn_pool(x[0], x[1], 3); }), kTol);
}

TEST(Autodiff, GaussianGradients) {
  auto a = rand_tensor({5, 2}, 41);
  auto mu = rand_tensor({5, 2}, 42);
  auto ls = rand_tensor({2}, 43, -1, 0.5);
  EXPECT_LT(check_op({a, mu, ls}, [](Tape&, auto& x) { return gaussian_logprob(x[0], x[1], x[2]); }), kTol);
  EXPECT_LT(check_op({a}, [](Tape&, auto& x) { return tanh_log_jacobian(x[0]); }), kTol);
  EXPECT_LT(check_op({ls}, [](Tape&, auto& x) { return gaussian_entropy(x[0]); }), kTol);
}

TEST(Autodiff, GaussianLogprobMatchesClosedForm) {
  Tensor a = Tensor::vector({0.3, -0.2});
  Tensor mu = Tensor::vector({0.1, 0.4});
  Tensor ls = Tensor::vector({-0.5, 0.2});
  double expect = 0.0;
  for (int j = 0; j < 2; ++j) {
    const double s = std::exp(ls[j]);
    expect += -0.5 * std::pow((a[j] - mu[j]) / s, 2) - ls[j] - 0.5 * std::log(2 * M_PI);
  }
  EXPECT_NEAR(nn::gaussian_logprob(a, mu, ls, false), expect, 1e-12);
  double jac = 0.0;
  for (int j = 0; j < 2; ++j) jac += std::log(1 - std::pow(std::tanh(a[j]), 2));
  EXPECT_NEAR(nn::gaussian_logprob(a, mu, ls, true), expect - jac, 1e-9);
}

TEST(Autodiff, BackwardRequiresScalarLoss) {
  Tape tape;
  Var x = tape.constant(Tensor::zeros({2}));
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Autodiff, NonFiniteValueRaisesDivergence) {
  Tape tape;
  Var x = tape.constant(Tensor::vector({800.0}));
  EXPECT_THROW(nn::exp(x), DivergenceError);
}

TEST(Autodiff, GradientsAccumulateIntoParams) {
  Param p("w", Tensor::vector({2.0}));
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.backward(sum(square(tape.param(p))));
  }
  EXPECT_DOUBLE_EQ(p.grad[0], 8.0);
}

TEST(Lora, FreshAdapterIsExactlyTheBaseMap) {
  ParamStore store;
  Rng rng(5);
  auto l = LoRALinear::create(store, "l", 4, 3, 2, 8.0, Group::Base, rng);
  EXPECT_EQ(store[l.lora_b].value, Tensor::zeros({3, 2}));
  Tensor x = rand_tensor({1, 4}, 6);
  Tape tape;
  Tensor with = l.forward(tape, store, tape.constant(x)).value();
  Tensor base = linear(tape.constant(x), tape.constant(store[l.weight].value), tape.constant(store[l.bias].value)).value();
  EXPECT_TRUE(with.bitwise_equal(base));
}

TEST(Lora, UntapedForwardMatchesTaped) {
  ParamStore store;
  Rng rng(5);
  auto l = LoRALinear::create(store, "l", 4, 3, 2, 8.0, Group::Base, rng);
  store[l.lora_b].value = rand_tensor({3, 2}, 9);
  Tensor x = rand_tensor({4}, 6);
  Tape tape;
  Tensor taped = l.forward(tape, store, tape.constant(x.reshaped({1, 4}))).value();
  Tensor direct = lora_forward(x, l, store);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(taped[i], direct[i], 1e-12);
}

TEST(Lora, GradientsReachBothFactors) {
  ParamStore store;
  Rng rng(8);
  auto l = LoRALinear::create(store, "l", 3, 2, 2, 4.0, Group::Base, rng);
  store[l.lora_b].value = rand_tensor({2, 2}, 10);
  Tensor x = rand_tensor({4, 3}, 11);
  auto loss = [&](bool g) {
    Tape tape;
    Var y = sum(square(l.forward(tape, store, tape.constant(x))));
    if (g) tape.backward(y);
    return y.item();
  };
  auto r = fixtures::finite_difference_check(store, [&] { return loss(false); }, [&] { loss(true); });
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Adam, FirstStepMatchesHandComputation) {
  ParamStore store;
  store.add("w", Tensor::vector({1.0, -2.0}), Group::Head);
  store.add("frozen", Tensor::vector({5.0}), Group::Base);
  store[1].trainable = false;
  store[0].grad = Tensor::vector({0.5, -4.0});
  store[1].grad = Tensor::vector({1.0});
  Adam opt(store, AdamConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
  opt.step(store);
  // bias-corrected m/sqrt(v) equals sign(g) on the first step
  EXPECT_NEAR(store[0].value[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-12);
  EXPECT_NEAR(store[0].value[1], -2.0 + 0.1 * 4.0 / (4.0 + 1e-8), 1e-12);
  EXPECT_EQ(store[1].value[0], 5.0);
  EXPECT_EQ(store[0].grad[0], 0.0);
  EXPECT_EQ(opt.updates(Group::Head), 1u);
  EXPECT_EQ(opt.updates(Group::Base), 0u);
}

TEST(Adam, ClipsGlobalNorm) {
  ParamStore a, b;
  a.add("w", Tensor::vector({0.0, 0.0}), Group::Head);
  b.add("w", Tensor::vector({0.0, 0.0}), Group::Head);
  a[0].grad = Tensor::vector({30.0, 40.0});
  b[0].grad = Tensor::vector({0.3, 0.4});
  Adam clipped(a, AdamConfig{0.01, 0.9, 0.999, 1e-8, 0.5});
  Adam plain(b, AdamConfig{0.01, 0.9, 0.999, 1e-8, 0.0});
  EXPECT_DOUBLE_EQ(clipped.step(a), 50.0);
  plain.step(b);
  EXPECT_DOUBLE_EQ(a[0].value[0], b[0].value[0]);
  EXPECT_DOUBLE_EQ(a[0].value[1], b[0].value[1]);
}

TEST(Adam, RejectsNonFiniteGradient) {
  ParamStore s;
  s.add("w", Tensor::vector({0.0}), Group::Head);
  s[0].grad[0] = std::nan("");
  Adam opt(s, AdamConfig{});
  EXPECT_THROW(opt.step(s), DivergenceError);
}

TEST(Adam, RejectsForeignLayout) {
  ParamStore a, b;
  a.add("w", Tensor::vector({0.0}), Group::Head);
  b.add("v", Tensor::vector({0.0}), Group::Head);
  Adam opt(a, AdamConfig{});
  EXPECT_THROW(opt.step(b), ContractError);
}

TEST(ParamStore, DigestTracksGroupsSeparately) {
  ParamStore s;
  s.add("a", Tensor::vector({1.0}), Group::Base);
  s.add("b", Tensor::vector({2.0}), Group::Lora);
  const auto base = s.digest({Group::Base});
  const auto lora = s.digest({Group::Lora});
  s[1].value[0] = 3.0;
  EXPECT_EQ(s.digest({Group::Base}), base);
  EXPECT_NE(s.digest({Group::Lora}), lora);
  EXPECT_THROW(s.add("a", Tensor::vector({0.0}), Group::Head), ContractError);
}

TEST(Losses, MseBatchLossIsMeanOverRowsOfSquaredNorm) {
  Tensor p = Tensor::matrix(2, 2, {1, 2, 3, 4});
  Tensor t = Tensor::matrix(2, 2, {0, 0, 1, 1});
  EXPECT_DOUBLE_EQ(mse_batch_loss(p, t), (1 + 4 + 4 + 9) / 2.0);
}
