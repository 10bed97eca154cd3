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

#include "fbsim/sched.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fbsim/errors.h"

namespace fbsim {

namespace {

bool slack_order(const TaskView& a, const TaskView& b) {
  if (a.slack != b.slack) return a.slack < b.slack;
  return a.arrival_seq < b.arrival_seq;  // FIFO tie-break
}

bool fifo_order(const TaskView& a, const TaskView& b) {
  return a.arrival_seq < b.arrival_seq;
}

void finalize_plan(BatchPlan& plan, const CostModel& model,
                   std::int64_t total_new, std::int64_t total_context) {
  if (plan.entries.empty()) {
    plan.predicted_ms = 0.0;
    plan.time_budget_used_ms = 0.0;
    plan.token_budget_used = 0;
    return;
  }
  plan.predicted_ms = predict_step_time_ms(model, total_new, total_context);
  plan.time_budget_used_ms = plan.predicted_ms;
  plan.token_budget_used = total_new;
}

}  // namespace

const char* policy_name(Policy p) {
  switch (p) {
    case Policy::kPrefillFirst:
      return "prefill_first";
    case Policy::kSarathi:
      return "sarathi";
    case Policy::kFairBatch:
      return "fairbatch";
    case Policy::kFairBatchPab:
      return "fairbatch_pab";
  }
  return "unknown";
}

bool parse_policy(const std::string& name, Policy& out) {
  if (name == "prefill_first") {
    out = Policy::kPrefillFirst;
  } else if (name == "sarathi") {
    out = Policy::kSarathi;
  } else if (name == "fairbatch") {
    out = Policy::kFairBatch;
  } else if (name == "fairbatch_pab") {
    out = Policy::kFairBatchPab;
  } else {
    return false;
  }
  return true;
}

void validate_scheduler_config(const SchedulerConfig& cfg) {
  if (cfg.max_chunk < 1)
    throw ValidationError("scheduler.max_chunk must be >= 1");
  if (cfg.token_budget < cfg.max_chunk)
    throw ValidationError("scheduler.token_budget must be >= max_chunk");
  if (cfg.model.a_ms < 0.0 || cfg.model.b_ms <= 0.0 || cfg.model.c_ms < 0.0)
    throw ValidationError("scheduler cost model requires a >= 0, b > 0, c >= 0");
}

TimeUs init_time_budget(const std::vector<TaskView>& tasks) {
  if (tasks.empty()) {
    throw UsageError("init_time_budget requires at least one active task");
  }
  TimeUs min_tpot = std::numeric_limits<TimeUs>::max();
  TimeUs min_decode_slack = std::numeric_limits<TimeUs>::max();
  bool has_decode = false;
  for (const auto& t : tasks) {
    min_tpot = std::min(min_tpot, t.tpot_slo);
    if (t.phase == Phase::kDecode) {
      has_decode = true;
      min_decode_slack = std::min(min_decode_slack, t.slack);
    }
  }
  if (!has_decode) return min_tpot;
  return std::max(min_decode_slack, min_tpot);
}

BatchPlan form_batch_fairbatching(const std::vector<TaskView>& tasks,
                                  const SchedulerConfig& cfg) {
  const TimeUs init_budget = init_time_budget(tasks);
  TimeUs min_tpot = std::numeric_limits<TimeUs>::max();
  for (const auto& t : tasks) min_tpot = std::min(min_tpot, t.tpot_slo);
  const TimeUs urgency_bound = init_budget + min_tpot;

  std::vector<TaskView> group_ud, group_p, group_nd;
  for (const auto& t : tasks) {
    if (t.phase == Phase::kDecode && t.slack < urgency_bound) {
      group_ud.push_back(t);
    } else if (t.phase == Phase::kPrefill) {
      group_p.push_back(t);
    } else {
      group_nd.push_back(t);
    }
  }
  std::sort(group_ud.begin(), group_ud.end(), slack_order);
  std::sort(group_p.begin(), group_p.end(), slack_order);
  std::sort(group_nd.begin(), group_nd.end(), slack_order);

  const double a = cfg.model.a_ms;
  const double b = cfg.model.b_ms;
  const double c = cfg.model.c_ms;

  double time_budget = us_to_ms(init_budget) - a;
  std::int64_t token_budget = cfg.token_budget;

  BatchPlan plan;
  plan.init_time_budget_ms = us_to_ms(init_budget);
  std::int64_t total_new = 0;
  std::int64_t total_context = 0;

  auto consider = [&](const TaskView& t) {
    const double ctx_cost = c * static_cast<double>(t.context);
    const double time_cost =
        b * static_cast<double>(t.new_tokens_available) + ctx_cost;
    if (time_cost <= time_budget && t.new_tokens_available <= token_budget) {
      plan.entries.push_back({t.request_id, t.new_tokens_available});
      time_budget -= time_cost;
      token_budget -= t.new_tokens_available;
      total_new += t.new_tokens_available;
      total_context += t.context;
    } else if (token_budget > 0 && ctx_cost <= time_budget) {
      const double cp_real = std::min(static_cast<double>(token_budget),
                                      (time_budget - ctx_cost) / b);
      const auto cp = static_cast<std::int64_t>(std::floor(cp_real));
      if (cp >= 1) {
        plan.entries.push_back({t.request_id, static_cast<std::int32_t>(cp)});
        time_budget -= b * static_cast<double>(cp) + ctx_cost;
        token_budget -= cp;
        total_new += cp;
        total_context += t.context;
      }
    }
  };
  for (const auto& t : group_ud) consider(t);
  for (const auto& t : group_p) consider(t);
  for (const auto& t : group_nd) consider(t);

  finalize_plan(plan, cfg.model, total_new, total_context);
  return plan;
}

BatchPlan form_batch_sarathi(const std::vector<TaskView>& tasks,
                             const SchedulerConfig& cfg) {
  std::vector<TaskView> decodes, prefills;
  for (const auto& t : tasks) {
    (t.phase == Phase::kDecode ? decodes : prefills).push_back(t);
  }
  std::sort(decodes.begin(), decodes.end(), fifo_order);
  std::sort(prefills.begin(), prefills.end(), fifo_order);

  BatchPlan plan;
  std::int64_t total_new = 0;
  std::int64_t total_context = 0;
  // Stall-free: decodes are in every batch, even past the token budget.
  for (const auto& t : decodes) {
    plan.entries.push_back({t.request_id, 1});
    total_new += 1;
    total_context += t.context;
  }
  std::int64_t remaining =
      std::max<std::int64_t>(0, cfg.token_budget -
                                    static_cast<std::int64_t>(decodes.size()));
  for (const auto& t : prefills) {
    if (remaining <= 0) break;
    const std::int64_t chunk =
        std::min<std::int64_t>({remaining, cfg.max_chunk,
                                t.new_tokens_available});
    if (chunk < 1) continue;
    plan.entries.push_back({t.request_id, static_cast<std::int32_t>(chunk)});
    remaining -= chunk;
    total_new += chunk;
    total_context += t.context;
  }
  finalize_plan(plan, cfg.model, total_new, total_context);
  return plan;
}

BatchPlan form_batch_prefill_first(const std::vector<TaskView>& tasks,
                                   const SchedulerConfig& cfg) {
  std::vector<TaskView> fifo = tasks;
  std::sort(fifo.begin(), fifo.end(), fifo_order);

  BatchPlan plan;
  std::int64_t total_new = 0;
  std::int64_t total_context = 0;
  std::int64_t budget = cfg.token_budget;
  for (const auto& t : fifo) {
    if (budget <= 0) break;
    const std::int64_t take =
        t.phase == Phase::kDecode
            ? 1
            : std::min<std::int64_t>({budget, cfg.max_chunk,
                                      t.new_tokens_available});
    if (take < 1 || take > budget) continue;
    plan.entries.push_back({t.request_id, static_cast<std::int32_t>(take)});
    budget -= take;
    total_new += take;
    total_context += t.context;
  }
  finalize_plan(plan, cfg.model, total_new, total_context);
  return plan;
}

BatchPlan form_batch(const std::vector<TaskView>& tasks,
                     const SchedulerConfig& cfg) {
  switch (cfg.policy) {
    case Policy::kPrefillFirst:
      return form_batch_prefill_first(tasks, cfg);
    case Policy::kSarathi:
      return form_batch_sarathi(tasks, cfg);
    case Policy::kFairBatch:
    case Policy::kFairBatchPab:
      return form_batch_fairbatching(tasks, cfg);
  }
  throw UsageError("unknown scheduling policy");
}

std::int64_t pab(const std::vector<TaskView>& tasks, const CostModel& model,
                 const SloTargets& global_slos) {
  const double W = us_to_ms(global_slos.ttft_slo);
  const double T = us_to_ms(global_slos.tpot_slo);
  const double a = model.a_ms;
  const double b = model.b_ms;
  const double c = model.c_ms;

  // Steps reserved for the most urgent task's cadence. A min-slack above the
  // window still leaves the one batch that runs the new prefill itself.
  double n_batches = 1.0;
  if (!tasks.empty()) {
    TimeUs min_slack = std::numeric_limits<TimeUs>::max();
    for (const auto& t : tasks) min_slack = std::min(min_slack, t.slack);
    const double min_slack_ms = std::min(us_to_ms(min_slack), W);
    n_batches = (W - min_slack_ms) / T + 1.0;
  }
  const double r_batches = n_batches * a;

  double r_tasks = 0.0;
  std::int64_t prefill_tokens = 0;
  for (const auto& t : tasks) {
    const double steps = std::max(0.0, (W - us_to_ms(t.slack)) / T);
    r_tasks += steps * (b + static_cast<double>(t.context) * c);
    if (t.phase == Phase::kPrefill) prefill_tokens += t.new_tokens_available;
  }

  const double r_prefill = W - r_batches - r_tasks;
  const double t_prefill = r_prefill / (b + c);
  return static_cast<std::int64_t>(std::floor(t_prefill)) - prefill_tokens;
}

}  // namespace fbsim
