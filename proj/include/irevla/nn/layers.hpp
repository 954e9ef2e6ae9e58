#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "irevla/core/rng.hpp"
#include "irevla/nn/autodiff.hpp"
#include "irevla/nn/param_store.hpp"

namespace irevla::nn {

inline Tensor random_normal(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = stddev * standard_normal(rng);
  return t;
}

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
inline Tensor fan_in_uniform(std::size_t out, std::size_t in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Tensor t({out, in});
  for (auto& v : t.values()) v = uniform(rng, -bound, bound);
  return t;
}

struct Linear {
  std::size_t weight = 0;
  std::size_t bias = 0;
  std::size_t in = 0;
  std::size_t out = 0;

  static Linear create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                       Group group, Rng& rng, double gain = 1.0) {
    Tensor w = fan_in_uniform(out, in, rng);
    for (auto& v : w.values()) v *= gain;
    Linear l;
    l.in = in;
    l.out = out;
    l.weight = store.add(prefix + ".W", std::move(w), group);
    l.bias = store.add(prefix + ".b", Tensor::zeros({out}), group);
    return l;
  }

  Var forward(Tape& tape, ParamStore& store, Var x) const {
    return linear(x, tape.param(store[weight]), tape.param(store[bias]));
  }
};

// Affine map with a low-rank additive adapter:
//   y = W x + b + (alpha / r) B A x
// B starts at zero, so a fresh layer is exactly its base map. W and b carry
// the owner's group; A and B are always Group::Lora.
struct LoRALinear {
  std::size_t weight = 0;
  std::size_t bias = 0;
  std::size_t lora_a = 0;
  std::size_t lora_b = 0;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t rank = 0;
  double alpha = 0.0;

  double scaling() const { return alpha / static_cast<double>(rank); }

  static LoRALinear create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                           std::size_t rank, double alpha, Group base_group, Rng& rng,
                           double gain = 1.0, double a_std = 0.01) {
    if (rank == 0) throw ContractError("LoRA rank must be positive");
    LoRALinear l;
    l.in = in;
    l.out = out;
    l.rank = rank;
    l.alpha = alpha;
    Tensor w = fan_in_uniform(out, in, rng);
    for (auto& v : w.values()) v *= gain;
    l.weight = store.add(prefix + ".W", std::move(w), base_group);
    l.bias = store.add(prefix + ".b", Tensor::zeros({out}), base_group);
    l.lora_a = store.add(prefix + ".lora_A", random_normal({rank, in}, a_std, rng), Group::Lora);
    l.lora_b = store.add(prefix + ".lora_B", Tensor::zeros({out, rank}), Group::Lora);
    return l;
  }

  // x: [n x in] -> [n x out]
  Var forward(Tape& tape, ParamStore& store, Var x) const {
    if (x.value().cols() != in)
      throw DimensionError("LoRALinear: input width " + std::to_string(x.value().cols()) + ", expected " +
                           std::to_string(in));
    Var base = linear(x, tape.param(store[weight]), tape.param(store[bias]));
    Var zr = tape.constant(Tensor::zeros({rank}));
    Var zo = tape.constant(Tensor::zeros({out}));
    Var down = linear(x, tape.param(store[lora_a]), zr);
    Var up = linear(down, tape.param(store[lora_b]), zo);
    return add(base, scale(up, scaling()));
  }
};

// Tape-free evaluation of a single input vector.
inline Tensor lora_forward(const Tensor& x, const LoRALinear& layer, const ParamStore& store) {
  if (x.size() != layer.in)
    throw DimensionError("lora_forward: input length " + std::to_string(x.size()) + ", expected " +
                         std::to_string(layer.in));
  const Tensor& W = store[layer.weight].value;
  const Tensor& b = store[layer.bias].value;
  const Tensor& A = store[layer.lora_a].value;
  const Tensor& B = store[layer.lora_b].value;
  Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  Eigen::VectorXd ax = detail::cmat(A) * xv;
  Eigen::VectorXd y = detail::cmat(W) * xv;
  y += Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
  y += layer.scaling() * (detail::cmat(B) * ax);
  return Tensor({layer.out}, std::vector<double>(y.data(), y.data() + y.size()));
}

}  // namespace irevla::nn
