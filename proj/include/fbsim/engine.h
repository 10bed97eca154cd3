/* Copyright 2026 The fbsim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fbsim/costmodel.h"
#include "fbsim/sched.h"
#include "fbsim/slo.h"
#include "fbsim/time.h"
#include "fbsim/workload.h"

namespace fbsim {

enum class EventKind {
  kArrival,
  kAdmissionReject,
  kBatchStart,
  kTokenEmit,
  kRequestDone,
  kBatchEnd,
};

const char* event_kind_name(EventKind k);

struct Event {
  TimeUs t = 0;
  EventKind kind = EventKind::kArrival;
  std::int64_t req_id = -1;
  // arrival / admission_reject
  TimeUs arrival = 0;  // the request's own arrival time (t may lag on reroute)
  std::int32_t prompt_len = 0;
  std::int32_t output_len = 0;
  TimeUs ttft_slo = 0;
  TimeUs tpot_slo = 0;
  std::int64_t pab_tokens = 0;
  // batch_start / batch_end
  std::int64_t step = -1;
  std::int64_t new_tokens = 0;
  std::int64_t context_tokens = 0;
  double predicted_ms = 0.0;
  double actual_ms = 0.0;
  // token_emit
  std::int32_t token_idx = -1;
};

struct EventLog {
  int node_id = 0;
  bool incomplete = false;  // horizon hit with live or unserved requests
  std::vector<Event> events;
};

// JSONL export with a stable field order per event kind, suitable for golden
// files. The final line is a log_end marker carrying the incomplete flag.
void save_event_log(const EventLog& log, const std::string& path);
EventLog load_event_log(const std::string& path);

struct EngineConfig {
  SchedulerConfig scheduler;
  CostModel truth_model;   // ground-truth step times (may differ from scheduler)
  NoiseSpec noise;         // multiplicative truth noise, mean 1
  SloTargets global_slo;   // global targets used by PAB admission and reports
  std::int32_t max_active = 0;  // 0 = unbounded; memory guard only
};

struct RequestState {
  Request req;
  RequestProgress prog;
  std::int64_t seq = 0;  // node-local arrival order
};

// Builds scheduler task views at `now`. A request still missing prompt work
// is a prefill task; one that finished its prompt but not its output is a
// decode task. Finished requests yield no view.
//
// A decode task's slack is measured against the envelope re-anchored at
// min(arrival + ttft_slo, first token time): a request whose first token beat
// its TTFT target is not granted the unused headroom as decode slack, since
// its per-request TPOT compliance is judged from the actual first emission.
// Late-first-token requests keep the (tighter) arrival-anchored envelope.
std::vector<TaskView> build_task_views(const std::vector<RequestState>& reqs,
                                       TimeUs now);

struct StepOutcome {
  BatchPlan plan;
  double actual_ms = 0.0;
  std::vector<Event> emitted;  // token_emit events of this step
};

// One simulated inference engine. Driven by run_node / run_cluster:
//   enqueue() arrivals as they are routed, begin_step() at batch boundaries,
//   complete_step() when the in-flight step's end time is reached.
class Node {
 public:
  Node(int node_id, const EngineConfig& cfg);

  // Queues a request that becomes visible to the scheduler at the next batch
  // boundary at or after `visible_at`. Logs the arrival event.
  void enqueue(const Request& r, TimeUs visible_at);

  bool busy() const { return busy_; }
  TimeUs step_end() const { return step_end_; }

  // Pulls visible arrivals (running PAB admission when the policy calls for
  // it), forms a batch, and launches it. Returns the step end time, or
  // nullopt when the node has nothing to do at `now`.
  std::optional<TimeUs> begin_step(TimeUs now);

  // Applies the in-flight step's outcome at its end time.
  StepOutcome complete_step();

  // True while any request is pending, waiting, or active.
  bool has_live_requests() const;

  std::int64_t waiting_count() const {
    return static_cast<std::int64_t>(waiting_.size());
  }
  std::int64_t running_count() const {
    return static_cast<std::int64_t>(active_.size());
  }
  std::uint64_t steps_completed() const { return steps_completed_; }

  // Prefill admission budget over the node's current scheduler view.
  std::int64_t current_pab(TimeUs now) const;

  // Requests rejected by PAB admission since the last drain (for rerouting).
  std::vector<Request> drain_rejects();

  EventLog& log() { return log_; }
  const EventLog& log() const { return log_; }
  const EngineConfig& config() const { return cfg_; }
  int id() const { return node_id_; }

 private:
  void pull_arrivals(TimeUs now);
  std::vector<TaskView> views(TimeUs now) const;

  int node_id_ = 0;
  EngineConfig cfg_;
  struct Pending {
    Request req;
    TimeUs visible_at;
  };
  std::deque<Pending> pending_;
  std::deque<std::int64_t> waiting_;  // admitted, not yet scheduled
  std::vector<std::int64_t> active_;  // scheduled at least once, unfinished
  std::unordered_map<std::int64_t, RequestState> table_;
  std::vector<Request> rejects_;

  bool busy_ = false;
  TimeUs step_end_ = 0;
  BatchPlan inflight_;
  double inflight_actual_ms_ = 0.0;
  std::uint64_t step_counter_ = 0;
  std::uint64_t steps_completed_ = 0;
  std::int64_t seq_counter_ = 0;
  EventLog log_;
};

// Single-node discrete-event run: drives a Node over the trace until
// quiescence or `horizon`.
EventLog run_node(const Trace& trace, const EngineConfig& cfg, TimeUs horizon);

struct ReplayReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

// Re-derives log invariants: monotone timestamps, batch bracketing,
// consecutive token indices from 0, completion exactly at output_len, no
// activity for rejected requests.
ReplayReport replay_check(const EventLog& log);

}  // namespace fbsim
