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

#include "fbsim/engine.h"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <limits>

#include "fbsim/errors.h"
#include "json.hpp"

namespace fbsim {

namespace {
constexpr TimeUs kInf = std::numeric_limits<TimeUs>::max();
}

const char* event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::kArrival:
      return "arrival";
    case EventKind::kAdmissionReject:
      return "admission_reject";
    case EventKind::kBatchStart:
      return "batch_start";
    case EventKind::kTokenEmit:
      return "token_emit";
    case EventKind::kRequestDone:
      return "request_done";
    case EventKind::kBatchEnd:
      return "batch_end";
  }
  return "unknown";
}

std::vector<TaskView> build_task_views(const std::vector<RequestState>& reqs,
                                       TimeUs now) {
  std::vector<TaskView> views;
  views.reserve(reqs.size());
  for (const auto& rs : reqs) {
    if (rs.prog.next_output_idx >= rs.req.output_len) continue;  // finished
    TaskView v;
    v.request_id = rs.req.id;
    v.arrival_seq = rs.seq;
    v.tpot_slo = rs.req.tpot_slo;
    if (rs.prog.prefilled_tokens < rs.req.prompt_len) {
      v.phase = Phase::kPrefill;
      v.new_tokens_available = rs.req.prompt_len - rs.prog.prefilled_tokens;
      v.context = rs.prog.prefilled_tokens;
      v.slack = slack(rs.req, rs.prog, now);
    } else {
      v.phase = Phase::kDecode;
      v.new_tokens_available = 1;
      v.context = rs.req.prompt_len + rs.prog.next_output_idx;
      TimeUs anchor = rs.req.arrival + rs.req.ttft_slo;
      if (!rs.prog.emitted.empty()) {
        anchor = std::min(anchor, rs.prog.emitted.front().second);
      }
      v.slack = anchor +
                rs.req.tpot_slo * static_cast<TimeUs>(rs.prog.next_output_idx) -
                now;
    }
    views.push_back(v);
  }
  return views;
}

Node::Node(int node_id, const EngineConfig& cfg) : node_id_(node_id), cfg_(cfg) {
  validate_scheduler_config(cfg_.scheduler);
  if (cfg_.truth_model.b_ms <= 0.0 || cfg_.truth_model.a_ms < 0.0 ||
      cfg_.truth_model.c_ms < 0.0) {
    throw ValidationError("truth cost model requires a >= 0, b > 0, c >= 0");
  }
  log_.node_id = node_id;
}

void Node::enqueue(const Request& r, TimeUs visible_at) {
  validate_request(r);
  Event e;
  e.t = visible_at;
  e.kind = EventKind::kArrival;
  e.req_id = r.id;
  e.arrival = r.arrival;
  e.prompt_len = r.prompt_len;
  e.output_len = r.output_len;
  e.ttft_slo = r.ttft_slo;
  e.tpot_slo = r.tpot_slo;
  log_.events.push_back(e);
  pending_.push_back({r, visible_at});
}

std::vector<TaskView> Node::views(TimeUs now) const {
  std::vector<RequestState> rs;
  rs.reserve(active_.size() + waiting_.size());
  for (const auto id : active_) rs.push_back(table_.at(id));
  std::int64_t slots =
      cfg_.max_active > 0
          ? cfg_.max_active - static_cast<std::int64_t>(active_.size())
          : std::numeric_limits<std::int64_t>::max();
  for (const auto id : waiting_) {
    if (slots <= 0) break;
    rs.push_back(table_.at(id));
    --slots;
  }
  return build_task_views(rs, now);
}

std::int64_t Node::current_pab(TimeUs now) const {
  return pab(views(now), cfg_.scheduler.model, cfg_.global_slo);
}

void Node::pull_arrivals(TimeUs now) {
  while (!pending_.empty() && pending_.front().visible_at <= now) {
    const Request r = pending_.front().req;
    pending_.pop_front();
    if (cfg_.scheduler.policy == Policy::kFairBatchPab) {
      const std::int64_t budget = current_pab(now);
      if (admit(budget, r.prompt_len) == Admission::kReject) {
        Event e;
        e.t = now;
        e.kind = EventKind::kAdmissionReject;
        e.req_id = r.id;
        e.prompt_len = r.prompt_len;
        e.pab_tokens = budget;
        log_.events.push_back(e);
        rejects_.push_back(r);
        continue;
      }
    }
    RequestState rs;
    rs.req = r;
    rs.seq = seq_counter_++;
    table_[r.id] = rs;
    waiting_.push_back(r.id);
  }
}

std::optional<TimeUs> Node::begin_step(TimeUs now) {
  if (busy_) throw UsageError("begin_step called while a step is in flight");
  pull_arrivals(now);
  const auto v = views(now);
  if (v.empty()) return std::nullopt;

  BatchPlan plan = form_batch(v, cfg_.scheduler);

  std::int64_t total_new = 0;
  std::int64_t total_ctx = 0;
  for (const auto& entry : plan.entries) {
    total_new += entry.new_tokens;
    for (const auto& view : v) {
      if (view.request_id == entry.request_id) {
        total_ctx += view.context;
        break;
      }
    }
  }
  const double actual_ms = ground_truth_step_time_ms(
      cfg_.truth_model, total_new, total_ctx, cfg_.noise, step_counter_);

  // Scheduled-for-the-first-time requests move waiting -> active.
  for (const auto& entry : plan.entries) {
    const auto it = std::find(waiting_.begin(), waiting_.end(), entry.request_id);
    if (it != waiting_.end()) {
      waiting_.erase(it);
      active_.push_back(entry.request_id);
    }
  }

  Event e;
  e.t = now;
  e.kind = EventKind::kBatchStart;
  e.step = static_cast<std::int64_t>(step_counter_);
  e.new_tokens = total_new;
  e.context_tokens = total_ctx;
  e.predicted_ms = plan.predicted_ms;
  log_.events.push_back(e);

  busy_ = true;
  inflight_ = std::move(plan);
  inflight_actual_ms_ = actual_ms;
  // Steps take at least one clock quantum: keeps per-request emission times
  // strictly increasing and makes null spin steps (empty plans) advance.
  const TimeUs duration = std::max<TimeUs>(1, ms_to_us(actual_ms));
  step_end_ = now + duration;
  ++step_counter_;
  return step_end_;
}

StepOutcome Node::complete_step() {
  if (!busy_) throw UsageError("complete_step called with no step in flight");
  const TimeUs t = step_end_;
  StepOutcome out;
  out.plan = inflight_;
  out.actual_ms = inflight_actual_ms_;

  auto emit_token = [&](RequestState& rs) {
    const std::int32_t idx = rs.prog.next_output_idx;
    rs.prog.emitted.emplace_back(idx, t);
    rs.prog.next_output_idx = idx + 1;
    Event e;
    e.t = t;
    e.kind = EventKind::kTokenEmit;
    e.req_id = rs.req.id;
    e.token_idx = idx;
    log_.events.push_back(e);
    out.emitted.push_back(e);
    if (rs.prog.next_output_idx >= rs.req.output_len) {
      Event d;
      d.t = t;
      d.kind = EventKind::kRequestDone;
      d.req_id = rs.req.id;
      log_.events.push_back(d);
      const auto it = std::find(active_.begin(), active_.end(), rs.req.id);
      if (it != active_.end()) active_.erase(it);
    }
  };

  for (const auto& entry : inflight_.entries) {
    auto& rs = table_.at(entry.request_id);
    if (rs.prog.prefilled_tokens < rs.req.prompt_len) {
      rs.prog.prefilled_tokens += entry.new_tokens;
      // The chunk that completes the prompt produces the first output token.
      if (rs.prog.prefilled_tokens >= rs.req.prompt_len) emit_token(rs);
    } else {
      emit_token(rs);
    }
  }

  Event e;
  e.t = t;
  e.kind = EventKind::kBatchEnd;
  e.step = static_cast<std::int64_t>(step_counter_ - 1);
  e.actual_ms = inflight_actual_ms_;
  log_.events.push_back(e);

  busy_ = false;
  ++steps_completed_;
  return out;
}

bool Node::has_live_requests() const {
  return busy_ || !pending_.empty() || !waiting_.empty() || !active_.empty();
}

std::vector<Request> Node::drain_rejects() {
  std::vector<Request> out;
  out.swap(rejects_);
  return out;
}

EventLog run_node(const Trace& trace, const EngineConfig& cfg, TimeUs horizon) {
  Node node(0, cfg);
  std::size_t arr = 0;
  const auto& reqs = trace.requests;

  for (;;) {
    const TimeUs t_step = node.busy() ? node.step_end() : kInf;
    const TimeUs t_arr = arr < reqs.size() ? reqs[arr].arrival : kInf;
    const TimeUs t = std::min(t_step, t_arr);
    if (t == kInf) break;
    if (!node.busy() && t >= horizon) break;
    if (node.busy() && t_step == t) node.complete_step();
    while (arr < reqs.size() && reqs[arr].arrival == t) {
      node.enqueue(reqs[arr], reqs[arr].arrival);
      ++arr;
    }
    if (!node.busy() && t < horizon) node.begin_step(t);
  }

  EventLog log = std::move(node.log());
  log.incomplete = node.has_live_requests() || arr < reqs.size();
  return log;
}

ReplayReport replay_check(const EventLog& log) {
  ReplayReport report;
  auto violation = [&](std::size_t i, const std::string& what) {
    report.violations.push_back("event " + std::to_string(i) + ": " + what);
  };

  struct ReqState {
    bool arrived = false;
    bool rejected = false;
    bool done = false;
    std::int32_t expected_idx = 0;
    std::int32_t output_len = 0;
  };
  std::unordered_map<std::int64_t, ReqState> reqs;

  TimeUs last_t = std::numeric_limits<TimeUs>::min();
  bool in_batch = false;
  std::int64_t expected_step = 0;
  std::vector<std::size_t> batch_body;  // indices of events inside the batch

  for (std::size_t i = 0; i < log.events.size(); ++i) {
    const Event& e = log.events[i];
    if (e.t < last_t) violation(i, "timestamp decreases");
    last_t = std::max(last_t, e.t);

    switch (e.kind) {
      case EventKind::kArrival: {
        auto& r = reqs[e.req_id];
        if (r.arrived) violation(i, "duplicate arrival");
        r.arrived = true;
        r.output_len = e.output_len;
        break;
      }
      case EventKind::kAdmissionReject: {
        auto& r = reqs[e.req_id];
        if (!r.arrived) violation(i, "reject before arrival");
        if (r.rejected) violation(i, "duplicate admission_reject");
        if (r.expected_idx > 0 || r.done)
          violation(i, "reject after request activity");
        r.rejected = true;
        break;
      }
      case EventKind::kBatchStart: {
        if (in_batch) violation(i, "nested batch_start");
        if (e.step != expected_step) violation(i, "non-sequential step id");
        in_batch = true;
        batch_body.clear();
        break;
      }
      case EventKind::kTokenEmit: {
        if (!in_batch) violation(i, "token_emit outside a batch");
        batch_body.push_back(i);
        auto& r = reqs[e.req_id];
        if (!r.arrived) violation(i, "token_emit for unknown request");
        if (r.rejected) violation(i, "token_emit for rejected request");
        if (r.done) violation(i, "token_emit after request_done");
        if (e.token_idx != r.expected_idx) {
          violation(i, "token index " + std::to_string(e.token_idx) +
                           " does not continue sequence (expected " +
                           std::to_string(r.expected_idx) + ")");
        }
        if (e.token_idx == r.expected_idx) r.expected_idx = e.token_idx + 1;
        break;
      }
      case EventKind::kRequestDone: {
        if (!in_batch) violation(i, "request_done outside a batch");
        batch_body.push_back(i);
        auto& r = reqs[e.req_id];
        if (!r.arrived) violation(i, "request_done for unknown request");
        if (r.done) violation(i, "duplicate request_done");
        if (r.expected_idx != r.output_len)
          violation(i, "request_done before all tokens emitted");
        r.done = true;
        break;
      }
      case EventKind::kBatchEnd: {
        if (!in_batch) {
          violation(i, "batch_end without batch_start");
          break;
        }
        if (e.step != expected_step) violation(i, "batch_end step mismatch");
        for (const auto bi : batch_body) {
          if (log.events[bi].t != e.t)
            violation(bi, "in-batch event timestamp differs from batch_end");
        }
        in_batch = false;
        ++expected_step;
        break;
      }
    }
  }
  if (in_batch)
    report.violations.push_back("log ends inside an open batch");
  if (!log.incomplete) {
    for (const auto& [id, r] : reqs) {
      if (r.arrived && !r.rejected && !r.done) {
        report.violations.push_back("request " + std::to_string(id) +
                                    " neither done nor rejected in a "
                                    "complete log");
      }
    }
  }
  return report;
}

void save_event_log(const EventLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  char buf[512];
  for (const auto& e : log.events) {
    switch (e.kind) {
      case EventKind::kArrival:
        std::snprintf(buf, sizeof(buf),
                      "{\"t_ms\":%.3f,\"kind\":\"arrival\",\"req_id\":%" PRId64
                      ",\"arrival_ms\":%.3f,\"prompt_tokens\":%d,"
                      "\"output_tokens\":%d,\"ttft_slo_ms\":%.3f,"
                      "\"tpot_slo_ms\":%.3f}\n",
                      us_to_ms(e.t), e.req_id, us_to_ms(e.arrival),
                      e.prompt_len, e.output_len, us_to_ms(e.ttft_slo),
                      us_to_ms(e.tpot_slo));
        break;
      case EventKind::kAdmissionReject:
        std::snprintf(buf, sizeof(buf),
                      "{\"t_ms\":%.3f,\"kind\":\"admission_reject\","
                      "\"req_id\":%" PRId64 ",\"prompt_tokens\":%d,"
                      "\"pab_tokens\":%" PRId64 "}\n",
                      us_to_ms(e.t), e.req_id, e.prompt_len, e.pab_tokens);
        break;
      case EventKind::kBatchStart:
        std::snprintf(buf, sizeof(buf),
                      "{\"t_ms\":%.3f,\"kind\":\"batch_start\",\"step\":%" PRId64
                      ",\"new_tokens\":%" PRId64 ",\"context_tokens\":%" PRId64
                      ",\"predicted_ms\":%.6f}\n",
                      us_to_ms(e.t), e.step, e.new_tokens, e.context_tokens,
                      e.predicted_ms);
        break;
      case EventKind::kTokenEmit:
        std::snprintf(buf, sizeof(buf),
                      "{\"t_ms\":%.3f,\"kind\":\"token_emit\",\"req_id\":%" PRId64
                      ",\"token_idx\":%d}\n",
                      us_to_ms(e.t), e.req_id, e.token_idx);
        break;
      case EventKind::kRequestDone:
        std::snprintf(buf, sizeof(buf),
                      "{\"t_ms\":%.3f,\"kind\":\"request_done\","
                      "\"req_id\":%" PRId64 "}\n",
                      us_to_ms(e.t), e.req_id);
        break;
      case EventKind::kBatchEnd:
        std::snprintf(buf, sizeof(buf),
                      "{\"t_ms\":%.3f,\"kind\":\"batch_end\",\"step\":%" PRId64
                      ",\"actual_ms\":%.6f}\n",
                      us_to_ms(e.t), e.step, e.actual_ms);
        break;
    }
    out << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "{\"kind\":\"log_end\",\"node\":%d,\"incomplete\":%d}\n",
                log.node_id, log.incomplete ? 1 : 0);
  out << buf;
}

EventLog load_event_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open event log: " + path);
  EventLog log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError("event log line " + std::to_string(line_no) + ": " +
                       ex.what());
    }
    const std::string kind = j.value("kind", "");
    if (kind == "log_end") {
      log.node_id = j.value("node", 0);
      log.incomplete = j.value("incomplete", 0) != 0;
      continue;
    }
    Event e;
    e.t = ms_to_us(j.value("t_ms", 0.0));
    if (kind == "arrival") {
      e.kind = EventKind::kArrival;
      e.req_id = j.value("req_id", std::int64_t{-1});
      e.arrival = ms_to_us(j.value("arrival_ms", 0.0));
      e.prompt_len = j.value("prompt_tokens", 0);
      e.output_len = j.value("output_tokens", 0);
      e.ttft_slo = ms_to_us(j.value("ttft_slo_ms", 0.0));
      e.tpot_slo = ms_to_us(j.value("tpot_slo_ms", 0.0));
    } else if (kind == "admission_reject") {
      e.kind = EventKind::kAdmissionReject;
      e.req_id = j.value("req_id", std::int64_t{-1});
      e.prompt_len = j.value("prompt_tokens", 0);
      e.pab_tokens = j.value("pab_tokens", std::int64_t{0});
    } else if (kind == "batch_start") {
      e.kind = EventKind::kBatchStart;
      e.step = j.value("step", std::int64_t{-1});
      e.new_tokens = j.value("new_tokens", std::int64_t{0});
      e.context_tokens = j.value("context_tokens", std::int64_t{0});
      e.predicted_ms = j.value("predicted_ms", 0.0);
    } else if (kind == "token_emit") {
      e.kind = EventKind::kTokenEmit;
      e.req_id = j.value("req_id", std::int64_t{-1});
      e.token_idx = j.value("token_idx", -1);
    } else if (kind == "request_done") {
      e.kind = EventKind::kRequestDone;
      e.req_id = j.value("req_id", std::int64_t{-1});
    } else if (kind == "batch_end") {
      e.kind = EventKind::kBatchEnd;
      e.step = j.value("step", std::int64_t{-1});
      e.actual_ms = j.value("actual_ms", 0.0);
    } else {
      throw ParseError("event log line " + std::to_string(line_no) +
                       ": unknown kind '" + kind + "'");
    }
    log.events.push_back(e);
  }
  return log;
}

}  // namespace fbsim
