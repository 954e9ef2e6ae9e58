#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <string>
#include <vector>

#include "irevla/core/digest.hpp"
#include "irevla/core/errors.hpp"
#include "irevla/nn/param.hpp"

namespace irevla::nn {

// Ordered registry of named parameters. Layers refer to their parameters by
// index, so copying a store copies a whole network's weights.
class ParamStore {
 public:
  std::size_t add(std::string id, Tensor value, Group group) {
    if (index_.count(id)) throw ContractError("duplicate parameter id '" + id + "'");
    index_.emplace(id, params_.size());
    params_.emplace_back(std::move(id), std::move(value), group);
    return params_.size() - 1;
  }

  Param& operator[](std::size_t i) { return params_[i]; }
  const Param& operator[](std::size_t i) const { return params_[i]; }

  Param& at(const std::string& id) { return params_[index_of(id)]; }
  const Param& at(const std::string& id) const { return params_[index_of(id)]; }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  std::size_t index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ContractError("unknown parameter id '" + id + "'");
    return it->second;
  }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t count(Group g) const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size() * (p.group == g);
    return n;
  }

  // Content digest over the parameters belonging to any of `groups`.
  std::uint64_t digest(std::initializer_list<Group> groups) const {
    Fnv1a h;
    for (const auto& p : params_)
      for (Group g : groups)
        if (p.group == g) hash_param(h, p);
    return h.value();
  }
  std::uint64_t digest() const { return digest({Group::Base, Group::Lora, Group::Head}); }

  // Same ids, same order, same shapes.
  bool same_layout(const ParamStore& o) const {
    if (params_.size() != o.params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].id != o.params_[i].id || params_[i].value.shape() != o.params_[i].value.shape() ||
          params_[i].group != o.params_[i].group)
        return false;
    return true;
  }

 private:
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace irevla::nn
