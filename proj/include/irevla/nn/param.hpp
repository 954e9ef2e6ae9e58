#pragma once

#include <cstdint>
#include <string>

#include "irevla/core/digest.hpp"
#include "irevla/nn/tensor.hpp"

namespace irevla::nn {

// Which part of the policy a parameter belongs to. The three groups are the
// unit of freezing: the backbone base weights, the low-rank adapters on top of
// them, and everything downstream of the backbone (pooling queries and heads).
enum class Group : std::uint8_t { Base, Lora, Head };

inline const char* group_name(Group g) {
  switch (g) {
    case Group::Base: return "base";
    case Group::Lora: return "lora";
    case Group::Head: return "head";
  }
  return "?";
}

struct Param {
  std::string id;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  Group group = Group::Head;

  Param() = default;
  Param(std::string name, Tensor v, Group g = Group::Head)
      : id(std::move(name)), value(std::move(v)), grad(Tensor::zeros(value.shape())), group(g) {}

  void zero_grad() { grad.fill(0.0); }
};

inline void hash_param(Fnv1a& h, const Param& p) {
  h.update(p.id);
  for (auto d : p.value.shape()) h.update_pod(static_cast<std::uint64_t>(d));
  h.update(p.value.data(), p.value.size() * sizeof(double));
}

}  // namespace irevla::nn
