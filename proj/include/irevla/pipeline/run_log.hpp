#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "irevla/core/errors.hpp"

namespace irevla::pipeline {

// One line per pipeline event: "<EVENT> key=value ...". Kept in memory and,
// when a path is given, appended to disk with a flush per line.
class EventLog {
 public:
  EventLog() = default;
  explicit EventLog(const std::filesystem::path& path, bool append = false) { open(path, append); }

  void open(const std::filesystem::path& path, bool append = false) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    file_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!file_) throw IoError("cannot open event log '" + path.string() + "'");
  }

  void emit(const std::string& line) {
    lines_.push_back(line);
    if (file_.is_open()) {
      file_ << line << '\n';
      file_.flush();
      if (!file_) throw IoError("event log write failed");
    }
  }

  const std::vector<std::string>& lines() const { return lines_; }

  // Event names only, in order.
  std::vector<std::string> events() const {
    std::vector<std::string> out;
    for (const auto& l : lines_) out.push_back(l.substr(0, l.find(' ')));
    return out;
  }

 private:
  std::ofstream file_;
  std::vector<std::string> lines_;
};

struct MetricRow {
  long long wall_ms = 0;
  std::size_t env_steps = 0;
  std::string stage;
  std::string task_id;
  std::string metric;
  double value = 0.0;
};

inline const char* kMetricsHeader = "wall_ms,env_steps,stage,task_id,metric_name,value";

inline std::string format_metric_row(const MetricRow& r) {
  char v[40];
  std::snprintf(v, sizeof v, "%.17g", r.value);
  return std::to_string(r.wall_ms) + ',' + std::to_string(r.env_steps) + ',' + r.stage + ',' + r.task_id + ',' +
         r.metric + ',' + v;
}

// Append-only metrics CSV. The header is written only when the file is new or
// empty. wall_ms is 0 unless wall-clock recording is enabled, so reruns with
// the same seed produce identical files.
class MetricsWriter {
 public:
  MetricsWriter() = default;
  MetricsWriter(const std::filesystem::path& path, bool wall_clock) { open(path, wall_clock); }

  void open(const std::filesystem::path& path, bool wall_clock) {
    wall_clock_ = wall_clock;
    start_ = std::chrono::steady_clock::now();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    file_.open(path, std::ios::app);
    if (!file_) throw IoError("cannot open metrics file '" + path.string() + "'");
    if (fresh) {
      file_ << kMetricsHeader << '\n';
      file_.flush();
    }
  }

  void emit(std::size_t env_steps, const std::string& stage, const std::string& task_id, const std::string& metric,
            double value) {
    MetricRow r;
    r.wall_ms = wall_clock_ ? std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start_).count() : 0;
    r.env_steps = env_steps;
    r.stage = stage;
    r.task_id = task_id;
    r.metric = metric;
    r.value = value;
    rows_.push_back(r);
    if (file_.is_open()) {
      file_ << format_metric_row(r) << '\n';
      file_.flush();
      if (!file_) throw IoError("metrics write failed; metrics.csv may be partial");
    }
  }

  const std::vector<MetricRow>& rows() const { return rows_; }

 private:
  bool wall_clock_ = false;
  std::chrono::steady_clock::time_point start_;
  std::ofstream file_;
  std::vector<MetricRow> rows_;
};

}  // namespace irevla::pipeline
