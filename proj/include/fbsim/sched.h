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
#include <string>
#include <vector>

#include "fbsim/costmodel.h"
#include "fbsim/slo.h"
#include "fbsim/time.h"

namespace fbsim {

enum class Phase { kPrefill, kDecode };

// The scheduler's per-step view of one task. `context` counts the tokens
// whose KV entries are read during the step: for a prefill chunk, the tokens
// prefilled by earlier chunks; for a decode, the full prompt plus the tokens
// generated so far.
struct TaskView {
  std::int64_t request_id = 0;
  Phase phase = Phase::kDecode;
  TimeUs slack = 0;
  std::int32_t new_tokens_available = 0;  // remaining prompt tokens; 1 for decode
  std::int64_t context = 0;
  std::int64_t arrival_seq = 0;  // FIFO tie-break order
  TimeUs tpot_slo = 0;
};

struct BatchPlanEntry {
  std::int64_t request_id = 0;
  std::int32_t new_tokens = 0;
};

struct BatchPlan {
  std::vector<BatchPlanEntry> entries;
  // Predicted by the scheduler's own cost model over the entries; an empty
  // plan predicts 0 (no step is launched for it).
  double predicted_ms = 0.0;
  double time_budget_used_ms = 0.0;
  std::int64_t token_budget_used = 0;
  // Time ceiling the plan was formed under (fair batching only; 0 otherwise).
  double init_time_budget_ms = 0.0;
};

enum class Policy { kPrefillFirst, kSarathi, kFairBatch, kFairBatchPab };

const char* policy_name(Policy p);
bool parse_policy(const std::string& name, Policy& out);

struct SchedulerConfig {
  Policy policy = Policy::kFairBatch;
  // Token ceiling per step. For sarathi this is the tuned TokenBudget knob;
  // for fair batching it is the MAX_TOKEN_BUDGET graph-size ceiling; for
  // prefill-first it is the (large) step size.
  std::int64_t token_budget = 2048;
  // Per-chunk ceiling for the token-budget policies (graph bucket size).
  std::int32_t max_chunk = 2048;
  CostModel model;
};

void validate_scheduler_config(const SchedulerConfig& cfg);

// Adaptive per-step time ceiling: max(min slack over decode tasks, min
// tpot_slo over all active tasks). With no decode tasks the TPOT floor is the
// only binding term. Throws UsageError on an empty task list.
TimeUs init_time_budget(const std::vector<TaskView>& tasks);

// Three-group fair batch formation with chunking. Urgent decodes (slack <
// init_time_budget + min tpot_slo) go first, then prefills, then the
// remaining decodes; each group in ascending slack order. Whole tasks are
// admitted when b*new + c*context fits the remaining time and token budgets;
// otherwise a prefill is chunked to the largest whole-token count that fits.
BatchPlan form_batch_fairbatching(const std::vector<TaskView>& tasks,
                                  const SchedulerConfig& cfg);

// Stall-free baseline: every decode task is admitted unconditionally; the
// remaining token budget is filled with FIFO-ordered prefill chunks.
BatchPlan form_batch_sarathi(const std::vector<TaskView>& tasks,
                             const SchedulerConfig& cfg);

// FIFO over arrival order regardless of phase, with a large token budget.
BatchPlan form_batch_prefill_first(const std::vector<TaskView>& tasks,
                                   const SchedulerConfig& cfg);

// Dispatch on cfg.policy (fairbatch_pab forms batches exactly as fairbatch;
// it differs only in admission control).
BatchPlan form_batch(const std::vector<TaskView>& tasks,
                     const SchedulerConfig& cfg);

// Prefill admission budget: how many additional prefill tokens this node can
// absorb within the global TTFT SLO, assuming every decode task is deferred
// until its slack is exhausted. May be negative (no admission capacity).
std::int64_t pab(const std::vector<TaskView>& tasks, const CostModel& model,
                 const SloTargets& global_slos);

enum class Admission { kAdmit, kReject };

inline Admission admit(std::int64_t pab_now, std::int64_t incoming_prompt) {
  return incoming_prompt <= pab_now ? Admission::kAdmit : Admission::kReject;
}

}  // namespace fbsim
