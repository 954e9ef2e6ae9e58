#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "irevla/core/errors.hpp"
#include "irevla/env/trajectory.hpp"

namespace irevla::cli {

using env::Trajectory;
using nn::Tensor;

inline constexpr int kTrajectoryFormatVersion = 1;

struct TrajectoryFileInfo {
  std::size_t d_in = 0, d_a = 0, m = 0;
  std::vector<std::string> tasks;
};

// JSON lines: one header object, then one object per transition. Doubles are
// printed with round-trip precision so a reload is bitwise identical.
inline void write_trajectories(std::ostream& os, const std::vector<Trajectory>& trajs, std::size_t m, std::size_t d_in,
                               std::size_t d_a) {
  std::vector<std::string> tasks;
  std::map<std::string, std::size_t> index;
  for (const auto& t : trajs)
    if (index.emplace(t.task_id, tasks.size()).second) tasks.push_back(t.task_id);
  nlohmann::json header = {{"format_version", kTrajectoryFormatVersion},
                           {"tasks", tasks},
                           {"d_in", d_in},
                           {"d_a", d_a},
                           {"m", m},
                           {"trajectories", trajs.size()}};
  os << header.dump() << '\n';
  for (std::size_t id = 0; id < trajs.size(); ++id) {
    const auto& tr = trajs[id];
    for (std::size_t t = 0; t < tr.steps.size(); ++t) {
      const auto& s = tr.steps[t];
      if (s.obs.size() != m * d_in || s.action.size() != d_a)
        throw DimensionError("trajectory '" + tr.task_id + "' step " + std::to_string(t) + " has the wrong width");
      nlohmann::json line = {{"traj_id", id},      {"task_id", tr.task_id}, {"seed", tr.seed},
                             {"t", t},             {"obs", s.obs.values()}, {"action", s.action.values()},
                             {"reward", s.reward}, {"done", s.done}};
      os << line.dump() << '\n';
    }
  }
  if (!os) throw IoError("failed to write trajectory stream");
}

inline std::vector<Trajectory> read_trajectories(std::istream& is, TrajectoryFileInfo* info_out = nullptr) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("trajectory file is empty (missing header)");
  TrajectoryFileInfo info;
  std::size_t expected = 0;
  try {
    auto h = nlohmann::json::parse(line);
    if (h.at("format_version").get<int>() != kTrajectoryFormatVersion)
      throw IoError("unsupported trajectory format version " + h.at("format_version").dump());
    info.d_in = h.at("d_in").get<std::size_t>();
    info.d_a = h.at("d_a").get<std::size_t>();
    info.m = h.at("m").get<std::size_t>();
    info.tasks = h.at("tasks").get<std::vector<std::string>>();
    expected = h.value("trajectories", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad trajectory header: ") + e.what());
  }

  std::vector<Trajectory> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      const auto id = j.at("traj_id").get<std::size_t>();
      const auto t = j.at("t").get<std::size_t>();
      if (id == out.size()) {
        Trajectory tr;
        tr.task_id = j.at("task_id").get<std::string>();
        tr.seed = j.at("seed").get<std::uint64_t>();
        out.push_back(std::move(tr));
      } else if (id + 1 != out.size()) {
        throw IoError("line " + std::to_string(lineno) + ": trajectory " + std::to_string(id) + " is not contiguous");
      }
      Trajectory& tr = out.back();
      if (t != tr.steps.size()) throw IoError("line " + std::to_string(lineno) + ": step index out of order");
      env::Transition s;
      auto obs = j.at("obs").get<std::vector<double>>();
      auto act = j.at("action").get<std::vector<double>>();
      if (obs.size() != info.m * info.d_in || act.size() != info.d_a)
        throw IoError("line " + std::to_string(lineno) + ": width does not match the header");
      s.obs = Tensor({info.m, info.d_in}, std::move(obs));
      s.action = Tensor({info.d_a}, std::move(act));
      s.reward = j.at("reward").get<double>();
      s.done = j.at("done").get<bool>();
      tr.steps.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  for (auto& tr : out) {
    tr.success = !tr.steps.empty() && tr.steps.back().reward == 1.0;
    if (!env::reward_sequence_valid(tr)) throw IoError("trajectory '" + tr.task_id + "' violates the reward invariant");
  }
  if (expected && expected != out.size())
    throw IoError("header announces " + std::to_string(expected) + " trajectories, found " + std::to_string(out.size()));
  if (info_out) *info_out = info;
  return out;
}

inline void save_trajectories(const std::filesystem::path& path, const std::vector<Trajectory>& trajs, std::size_t m,
                              std::size_t d_in, std::size_t d_a) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + tmp + "' for writing");
    write_trajectories(os, trajs, m, d_in, d_a);
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<Trajectory> load_trajectories(const std::filesystem::path& path, TrajectoryFileInfo* info = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open trajectory file '" + path.string() + "'");
  return read_trajectories(is, info);
}

}  // namespace irevla::cli
