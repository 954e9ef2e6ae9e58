#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "irevla/core/errors.hpp"
#include "irevla/core/rng.hpp"
#include "irevla/nn/tensor.hpp"

namespace irevla::env {

using nn::Tensor;

enum class Family : std::uint8_t { Reach, Press, SlideOpen, PickPlace };
enum class Category : std::uint8_t { Expert, Rl, Holdout };

inline constexpr std::size_t kNumColors = 4;
inline constexpr std::size_t kNumFamilies = 4;

inline const char* family_name(Family f) {
  switch (f) {
    case Family::Reach: return "reach";
    case Family::Press: return "press";
    case Family::SlideOpen: return "slide-open";
    case Family::PickPlace: return "pick-place";
  }
  return "?";
}

inline const char* category_name(Category c) {
  switch (c) {
    case Category::Expert: return "expert";
    case Category::Rl: return "rl";
    case Category::Holdout: return "holdout";
  }
  return "?";
}

inline Category parse_category(const std::string& s) {
  if (s == "expert") return Category::Expert;
  if (s == "rl") return Category::Rl;
  if (s == "holdout") return Category::Holdout;
  throw ContractError("unknown category '" + s + "'");
}

struct Box {
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
  friend auto operator<=>(const Box&, const Box&) = default;
};

struct Variation {
  int color = 0;          // 0..kNumColors-1
  double scale = 1.0;     // object shape scale; sets the grasp radius
  Box range;              // where the task's object and goal are placed
  friend auto operator<=>(const Variation&, const Variation&) = default;
};

struct TaskDescriptor {
  std::string id;
  Family family = Family::Reach;
  Variation variation;
  Category category = Category::Expert;
  Tensor instruction;  // [d_in], fixed per family

  auto key() const { return std::tie(family, variation); }
};

struct EnvConfig {
  std::size_t horizon = 100;
  double step_size = 0.05;
  std::size_t d_in = 16;
  std::size_t tokens = 4;
};

struct SuiteConfig {
  std::uint64_t seed = 2024;
  std::size_t expert_count = 6;
  std::size_t rl_count = 2;
  std::size_t holdout_count = 3;
};

struct Suite {
  std::vector<TaskDescriptor> expert, rl, holdout;

  std::vector<const TaskDescriptor*> all() const {
    std::vector<const TaskDescriptor*> out;
    for (auto* v : {&expert, &rl, &holdout})
      for (const auto& t : *v) out.push_back(&t);
    return out;
  }
  const TaskDescriptor& find(const std::string& id) const {
    for (auto* t : all())
      if (t->id == id) return *t;
    throw ContractError("unknown task id '" + id + "'");
  }
  const std::vector<TaskDescriptor>& category(Category c) const {
    return c == Category::Expert ? expert : c == Category::Rl ? rl : holdout;
  }
};

namespace detail {
inline const Box kLeft{0.15, 0.45, 0.15, 0.85};
inline const Box kRight{0.55, 0.85, 0.15, 0.85};
inline const Box kCenter{0.30, 0.70, 0.25, 0.75};
inline const Box kSlideLeft{0.15, 0.40, 0.15, 0.85};
inline const Box kSlideRight{0.40, 0.65, 0.15, 0.85};
inline const Box kLow{0.15, 0.85, 0.15, 0.45};
inline const Box kHigh{0.15, 0.85, 0.55, 0.85};
inline const Box kMid{0.25, 0.60, 0.15, 0.85};

inline const char* box_name(const Box& b) {
  if (b == kLeft) return "left";
  if (b == kRight) return "right";
  if (b == kCenter) return "center";
  if (b == kSlideLeft) return "sleft";
  if (b == kSlideRight) return "sright";
  if (b == kLow) return "low";
  if (b == kHigh) return "high";
  if (b == kMid) return "mid";
  return "box";
}

struct Candidate {
  Family family;
  Variation variation;
};

// Ordered candidate pools per category. The leading entries form the default
// 6/2/3 suite; larger counts draw further entries in order.
inline const std::vector<Candidate>& expert_pool() {
  static const std::vector<Candidate> pool = {
      {Family::Reach, {0, 1.0, kLeft}},       {Family::Reach, {1, 1.0, kRight}},
      {Family::Press, {0, 1.0, kLeft}},       {Family::SlideOpen, {2, 1.0, kSlideLeft}},
      {Family::PickPlace, {1, 1.0, kLeft}},   {Family::PickPlace, {2, 1.2, kCenter}},
      {Family::Press, {2, 1.0, kLow}},        {Family::Reach, {2, 0.8, kHigh}},
      {Family::SlideOpen, {0, 1.2, kSlideLeft}}, {Family::PickPlace, {0, 1.0, kLow}},
  };
  return pool;
}
inline const std::vector<Candidate>& rl_pool() {
  static const std::vector<Candidate> pool = {
      {Family::SlideOpen, {1, 0.3, kSlideRight}}, {Family::PickPlace, {3, 0.4, kCenter}},
      {Family::PickPlace, {0, 0.3, kLow}},        {Family::PickPlace, {2, 0.3, kMid}},
  };
  return pool;
}
inline const std::vector<Candidate>& holdout_pool() {
  static const std::vector<Candidate> pool = {
      {Family::Reach, {3, 1.2, kCenter}},     {Family::Press, {1, 0.8, kCenter}},
      {Family::SlideOpen, {1, 1.2, kSlideRight}}, {Family::PickPlace, {0, 0.8, kHigh}},
      {Family::Press, {3, 1.2, kHigh}},
  };
  return pool;
}

inline std::string task_id(Family f, const Variation& v) {
  std::ostringstream os;
  os << family_name(f) << "-c" << v.color << "-s" << static_cast<int>(v.scale * 10 + 0.5) << "-"
     << box_name(v.range);
  return os.str();
}
}  // namespace detail

inline Tensor instruction_embedding(Family f, std::uint64_t suite_seed, std::size_t d_in) {
  Rng rng(derive_seed(suite_seed, {0x696e7374ULL, static_cast<std::uint64_t>(f)}));
  Tensor t({d_in});
  for (auto& v : t.values()) v = standard_normal(rng);
  return t;
}

// Throws ConfigError if any (family, variation) key appears twice.
inline void validate_suite(const Suite& s) {
  std::set<std::tuple<Family, Variation>> seen;
  for (auto* t : s.all())
    if (!seen.insert({t->family, t->variation}).second)
      throw ConfigError("task variation '" + t->id + "' is assigned to more than one category");
}

inline Suite make_suite(const SuiteConfig& cfg, const EnvConfig& env = {}) {
  Suite s;
  auto fill = [&](std::vector<TaskDescriptor>& dst, const std::vector<detail::Candidate>& pool, std::size_t n,
                  Category cat) {
    if (n > pool.size())
      throw ConfigError(std::string("suite.") + category_name(cat) + "_count = " + std::to_string(n) +
                        " exceeds the " + std::to_string(pool.size()) + " available variations");
    for (std::size_t i = 0; i < n; ++i) {
      const auto& c = pool[i];
      dst.push_back(TaskDescriptor{detail::task_id(c.family, c.variation), c.family, c.variation, cat,
                                   instruction_embedding(c.family, cfg.seed, env.d_in)});
    }
  };
  fill(s.expert, detail::expert_pool(), cfg.expert_count, Category::Expert);
  fill(s.rl, detail::rl_pool(), cfg.rl_count, Category::Rl);
  fill(s.holdout, detail::holdout_pool(), cfg.holdout_count, Category::Holdout);
  validate_suite(s);
  return s;
}

}  // namespace irevla::env
