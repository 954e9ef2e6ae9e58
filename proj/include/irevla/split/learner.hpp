#pragma once

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "irevla/model/checkpoint.hpp"
#include "irevla/pipeline/irevla.hpp"
#include "irevla/split/socket.hpp"

namespace irevla::split {

using pipeline::PipelineState;
using pipeline::RunConfig;
using pipeline::RunContext;
using pipeline::RunPaths;

inline WeightSyncPayload make_weight_sync(const model::PolicyNet& net, std::uint64_t counter, model::Metadata meta = {}) {
  WeightSyncPayload p;
  p.counter = counter;
  p.digest = net.params().digest();
  p.checkpoint = model::serialize_checkpoint(net, std::move(meta));
  p.crc = crc32_of(p.checkpoint);
  return p;
}

// Loads a WeightSync into `dst` and checks the announced digest.
inline void apply_weight_sync(const WeightSyncPayload& p, model::PolicyNet& dst) {
  model::PolicyNet net = model::deserialize_checkpoint(p.checkpoint);
  if (net.params().digest() != p.digest) throw ProtocolError("WeightSync digest does not match the shipped weights");
  dst.copy_weights_from(net);
}

// Stage-2 side of the split pipeline as a message-driven state machine.
// Only TrajBatch and StageDone change state; everything else is read-only.
class LearnerService {
 public:
  LearnerService(RunConfig cfg, env::Suite suite, std::vector<Trajectory> expert, const model::PolicyNet& pi0,
                 std::uint64_t config_digest, RunContext ctx = {}, std::optional<RunPaths> paths = {})
      : cfg_(std::move(cfg)), suite_(std::move(suite)), expert_(std::move(expert)), state_(pi0),
        config_digest_(config_digest), ctx_(ctx), paths_(std::move(paths)) {
    state_.d_rl.assign(suite_.rl.size(), {});
    ctx_.event("COPY src=pi0 dst=pi2");
    last_sync_ = encode_weight_sync(make_weight_sync(state_.pi2, 0));
  }

  bool finished() const { return finished_; }
  std::size_t next_task() const { return next_task_; }
  std::uint64_t counter() const { return counter_; }
  const PipelineState& state() const { return state_; }
  const std::vector<std::string>& log() const { return log_; }

  // Reply to one message (if any). Malformed payloads raise ProtocolError.
  std::optional<Message> handle(const Message& m) {
    switch (m.kind) {
      case Kind::Hello: {
        auto h = decode_hello(m);
        if (h.config_digest != config_digest_)
          return encode_text(Kind::Error, "config digest mismatch: actor " + hex64(h.config_digest) + ", learner " +
                                               hex64(config_digest_));
        return last_sync_;
      }
      case Kind::TrajBatch: {
        auto b = decode_traj_batch(m);
        if (b.task_index < next_task_) return make_message(Kind::Ack);
        if (b.task_index > next_task_)
          return encode_text(Kind::Error, "TrajBatch for task " + std::to_string(b.task_index) + " while task " +
                                               std::to_string(next_task_) + " is open");
        for (const auto& t : b.trajectories)
          if (!t.success) return encode_text(Kind::Error, "TrajBatch carries an unsuccessful trajectory");
        staged_[b.sequence] = std::move(b.trajectories);
        return make_message(Kind::Ack);
      }
      case Kind::StageDone: {
        auto d = decode_stage_done(m);
        if (d.task_index < next_task_) return last_sync_;
        if (d.task_index > next_task_ || next_task_ >= suite_.rl.size())
          return encode_text(Kind::Error, "StageDone for unexpected task " + std::to_string(d.task_index));
        if (staged_.size() != d.batches)
          return encode_text(Kind::Error, "StageDone announces " + std::to_string(d.batches) + " batches, " +
                                               std::to_string(staged_.size()) + " received");
        run_stage2(d);
        return last_sync_;
      }
      case Kind::Ack:
        if (next_task_ >= suite_.rl.size()) finished_ = true;
        return std::nullopt;
      case Kind::Metrics:
        log_.push_back(decode_text(m));
        return make_message(Kind::Ack);
      case Kind::Error:
        log_.push_back("actor error: " + decode_text(m));
        return std::nullopt;
      case Kind::WeightSync:
        return encode_text(Kind::Error, "learner does not accept WeightSync");
    }
    throw ProtocolError("unhandled message kind");
  }

  // Serves sessions until the actor acknowledges the last WeightSync. Broken
  // sessions are dropped and the learner waits for a reconnect.
  void serve(Listener& listener, double timeout_s) {
    while (!finished_) {
      Connection c = listener.accept(timeout_s);
      session(c, timeout_s);
    }
  }

  void session(Connection& c, double timeout_s) {
    while (!finished_ && c.open()) {
      try {
        Message m = c.receive(timeout_s);
        if (auto reply = handle(m)) c.send(*reply);
      } catch (const FramingError& e) {
        drop(c, e.what());
      } catch (const ProtocolError& e) {
        drop(c, e.what());
      } catch (const NegotiationError& e) {
        drop(c, e.what());
      } catch (const TransportError& e) {
        log_.push_back(std::string("session ended: ") + e.what());
        c.close();
      }
    }
  }

 private:
  void drop(Connection& c, const std::string& why) {
    log_.push_back("dropping session: " + why);
    try {
      c.send(encode_text(Kind::Error, why));
    } catch (const Error&) {
    }
    c.close();
  }

  void run_stage2(const StageDonePayload& d) {
    const std::size_t i = d.task_index;
    model::PolicyNet pi1 = model::deserialize_checkpoint(d.checkpoint);
    state_.pi1.copy_weights_from(pi1);
    for (auto& [seq, trajs] : staged_)
      for (auto& t : trajs) state_.d_rl[i].push_back(std::move(t));
    staged_.clear();
    const auto& mc = state_.pi0.config();
    if (paths_) {
      model::save_checkpoint(state_.pi1, paths_->stage1(i), pipeline::stage_meta("stage1", i));
      cli::save_trajectories(paths_->d_rl(i), state_.d_rl[i], mc.tokens, mc.d_in, mc.d_a);
    }
    pipeline::irevla_stage2(state_, expert_, suite_.rl[i].id, i, cfg_, ctx_, pipeline::Mode::IReVla);
    if (paths_) model::save_checkpoint(state_.pi2, paths_->stage2(i), pipeline::stage_meta("stage2", i));
    ++next_task_;
    ++counter_;
    if (paths_ && next_task_ == suite_.rl.size())
      model::save_checkpoint(state_.pi2, paths_->final_ckpt(), pipeline::stage_meta("final"));
    last_sync_ = encode_weight_sync(make_weight_sync(state_.pi2, counter_));
  }

  RunConfig cfg_;
  env::Suite suite_;
  std::vector<Trajectory> expert_;
  PipelineState state_;
  std::uint64_t config_digest_;
  RunContext ctx_;
  std::optional<RunPaths> paths_;
  std::map<std::uint32_t, std::vector<Trajectory>> staged_;
  Message last_sync_;
  std::size_t next_task_ = 0;
  std::uint64_t counter_ = 0;
  bool finished_ = false;
  std::vector<std::string> log_;
};

}  // namespace irevla::split
