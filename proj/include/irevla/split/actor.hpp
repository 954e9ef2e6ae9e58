#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "irevla/split/learner.hpp"

namespace irevla::split {

struct ActorOptions {
  double timeout_s = 300.0;
  std::size_t retries = 3;
  double backoff_s = 0.2;      // doubled after each failed attempt
  std::size_t batch_size = 16; // trajectories per TrajBatch
};

struct ActorResult {
  PipelineState state;
  std::uint64_t backbone_updates = 0;  // must stay 0: the actor only runs Stage 1
  std::size_t reconnects = 0;
  std::uint64_t final_counter = 0;
};

// Stage-1 side of the split pipeline. Talks to a LearnerService over TCP,
// reconnecting with exponential backoff when a request fails in transit.
class ActorClient {
 public:
  ActorClient(RunConfig cfg, env::Suite suite, Endpoint learner, std::uint64_t config_digest, ActorOptions opt = {},
              RunContext ctx = {}, std::optional<RunPaths> paths = {})
      : cfg_(std::move(cfg)), suite_(std::move(suite)), ep_(std::move(learner)), config_digest_(config_digest),
        opt_(opt), ctx_(ctx), paths_(std::move(paths)) {}

  ActorResult run() {
    const WeightSyncPayload first = connect_and_hello();
    if (first.counter != 0) throw ProtocolError("learner is past task 0 (counter " + std::to_string(first.counter) + ")");
    model::PolicyNet pi0 = model::deserialize_checkpoint(first.checkpoint);
    if (pi0.params().digest() != first.digest) throw ProtocolError("initial WeightSync digest mismatch");

    ActorResult res{PipelineState(pi0), 0, 0, 0};
    PipelineState& st = res.state;
    st.d_rl.assign(suite_.rl.size(), {});
    ctx_.event("COPY src=pi0 dst=pi1");
    ctx_.event("COPY src=pi0 dst=pi2");
    const auto& mc = pi0.config();

    for (std::size_t i = 0; i < suite_.rl.size(); ++i) {
      auto r1 = pipeline::irevla_stage1(st, suite_.rl[i], i, cfg_, ctx_);
      res.backbone_updates += r1.report.backbone_updates;
      st.d_rl[i] = std::move(r1.harvested);
      st.reports.push_back(r1.report);
      if (paths_) {
        model::save_checkpoint(st.pi1, paths_->stage1(i), pipeline::stage_meta("stage1", i));
        cli::save_trajectories(paths_->d_rl(i), st.d_rl[i], mc.tokens, mc.d_in, mc.d_a);
      }

      std::uint32_t seq = 0;
      const auto& d = st.d_rl[i];
      for (std::size_t b = 0; b < d.size(); b += opt_.batch_size, ++seq) {
        TrajBatchPayload p{static_cast<std::uint32_t>(i), seq, {}};
        p.trajectories.assign(d.begin() + static_cast<std::ptrdiff_t>(b),
                              d.begin() + static_cast<std::ptrdiff_t>(std::min(d.size(), b + opt_.batch_size)));
        expect(transact(encode_traj_batch(p), res), Kind::Ack);
      }
      StageDonePayload done{static_cast<std::uint32_t>(i), seq,
                            model::serialize_checkpoint(st.pi1, pipeline::stage_meta("stage1", i))};
      Message reply = transact(encode_stage_done(done), res);
      expect(reply, Kind::WeightSync);
      auto sync = decode_weight_sync(reply);
      if (sync.counter != i + 1)
        throw ProtocolError("expected WeightSync " + std::to_string(i + 1) + ", got " + std::to_string(sync.counter));
      apply_weight_sync(sync, st.pi2);
      res.final_counter = sync.counter;
      ctx_.event("SYNC task=" + std::to_string(i) + " counter=" + std::to_string(sync.counter) +
                 " digest=" + hex64(sync.digest));
      if (paths_) model::save_checkpoint(st.pi2, paths_->stage2(i), pipeline::stage_meta("stage2", i));
    }
    if (paths_) model::save_checkpoint(st.pi2, paths_->final_ckpt(), pipeline::stage_meta("final"));
    try {
      conn_.send(make_message(Kind::Ack));
    } catch (const TransportError&) {
    }
    conn_.close();
    return res;
  }

 private:
  static void expect(const Message& m, Kind k) {
    if (m.kind == Kind::Error) throw ProtocolError("learner error: " + decode_text(m));
    if (m.kind != k)
      throw ProtocolError(std::string("expected ") + kind_name(k) + ", got " + kind_name(m.kind));
  }

  WeightSyncPayload connect_and_hello() {
    for (std::size_t attempt = 0;; ++attempt) {
      try {
        conn_ = connect_to(ep_, opt_.timeout_s);
        conn_.send(encode_hello(HelloPayload{config_digest_, "actor"}));
        Message m = conn_.receive(opt_.timeout_s);
        if (m.kind == Kind::Error) throw NegotiationError("learner refused the session: " + decode_text(m));
        expect(m, Kind::WeightSync);
        return decode_weight_sync(m);
      } catch (const TransportError& e) {
        backoff_or_throw(attempt, e.what());
      } catch (const FramingError& e) {
        backoff_or_throw(attempt, e.what());
      }
    }
  }

  void backoff_or_throw(std::size_t attempt, const std::string& why) {
    conn_.close();
    if (attempt >= opt_.retries)
      throw TransportError("learner unreachable after " + std::to_string(attempt + 1) + " attempts: " + why);
    std::this_thread::sleep_for(std::chrono::duration<double>(opt_.backoff_s * static_cast<double>(1u << attempt)));
  }

  // Sends one request and waits for its reply. Requests are idempotent on
  // the learner, so a failed attempt is simply repeated on a new session.
  Message transact(const Message& req, ActorResult& res) {
    for (std::size_t attempt = 0;; ++attempt) {
      try {
        if (!conn_.open()) {
          connect_and_hello();
          ++res.reconnects;
        }
        conn_.send(req);
        return conn_.receive(opt_.timeout_s);
      } catch (const TransportError& e) {
        backoff_or_throw(attempt, e.what());
      } catch (const FramingError& e) {
        backoff_or_throw(attempt, e.what());
      }
    }
  }

  RunConfig cfg_;
  env::Suite suite_;
  Endpoint ep_;
  std::uint64_t config_digest_;
  ActorOptions opt_;
  RunContext ctx_;
  std::optional<RunPaths> paths_;
  Connection conn_;
};

}  // namespace irevla::split
