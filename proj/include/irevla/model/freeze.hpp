#pragma once

#include <string>
#include <utility>
#include <vector>

#include "irevla/core/errors.hpp"
#include "irevla/model/policy_net.hpp"

namespace irevla::model {

// Training stages and the parameter groups each one updates.
//   Sft0: base + head (adapters dormant)
//   Rl1:  head only
//   Sl2:  adapters + head (base frozen)
//   Full: everything (PPO-Replay baseline)
enum class Stage : std::uint8_t { Sft0, Rl1, Sl2, Full };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Sft0: return "SFT0";
    case Stage::Rl1: return "RL1";
    case Stage::Sl2: return "SL2";
    case Stage::Full: return "FULL";
  }
  return "?";
}

inline Stage parse_stage(const std::string& s) {
  if (s == "SFT0") return Stage::Sft0;
  if (s == "RL1") return Stage::Rl1;
  if (s == "SL2") return Stage::Sl2;
  if (s == "FULL") return Stage::Full;
  throw ContractError("unknown stage tag '" + s + "'");
}

inline bool stage_trains(Stage s, Group g) {
  switch (s) {
    case Stage::Sft0: return g != Group::Lora;
    case Stage::Rl1: return g == Group::Head;
    case Stage::Sl2: return g != Group::Base;
    case Stage::Full: return true;
  }
  throw ContractError("unknown stage");
}

struct FreezeMask {
  Stage stage = Stage::Sft0;
  std::vector<std::pair<std::string, bool>> trainable;  // in registry order

  // Parameter ids of one group, for partition audits.
  std::vector<std::string> base, lora, head;
};

inline FreezeMask apply_stage_freeze(PolicyNet& net, Stage stage) {
  FreezeMask mask;
  mask.stage = stage;
  for (auto& p : net.params()) {
    p.trainable = stage_trains(stage, p.group);
    mask.trainable.emplace_back(p.id, p.trainable);
    (p.group == Group::Base ? mask.base : p.group == Group::Lora ? mask.lora : mask.head).push_back(p.id);
  }
  return mask;
}

}  // namespace irevla::model
