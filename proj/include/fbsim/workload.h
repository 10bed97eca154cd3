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

#include "fbsim/time.h"

namespace fbsim {

// One inference request. SLO targets are carried per request so traces can
// override the scenario defaults record by record.
struct Request {
  std::int64_t id = 0;
  TimeUs arrival = 0;
  std::int32_t prompt_len = 0;
  std::int32_t output_len = 0;
  TimeUs ttft_slo = 0;
  TimeUs tpot_slo = 0;
};

// Throws ValidationError if any Request invariant is broken.
void validate_request(const Request& r);

struct Trace {
  std::string name;
  std::vector<Request> requests;  // sorted by arrival, ids unique
};

enum class TraceFormat { kJsonl, kCsv };

// Log-normal length distribution described by two interpretable knobs.
// Infeasible (mean, p90) pairs (p90/mean beyond what a log-normal can reach)
// are clamped to the closest feasible sigma, preserving the mean.
struct LengthDist {
  double mean = 1.0;
  double p90 = 1.0;
};

struct BurstProfile {
  double base_rate = 0.0;   // requests/s during idle phases
  double burst_rate = 0.0;  // requests/s during burst phases
  TimeUs burst_duration = 0;
  TimeUs idle_duration = 0;
  LengthDist prompt_len;
  LengthDist output_len;
  TimeUs ttft_slo = 0;  // SLO targets stamped on generated requests
  TimeUs tpot_slo = 0;
  std::uint64_t seed = 0;
};

struct SloDefaults {
  TimeUs ttft_slo = 0;
  TimeUs tpot_slo = 0;
};

// Loads a JSONL or CSV trace. Records missing SLO fields receive `defaults`.
// Records are re-sorted by arrival; ids are assigned in post-sort order.
// Throws ParseError (naming the line) or ValidationError.
Trace load_trace(const std::string& path, TraceFormat format,
                 const SloDefaults& defaults);

// Divides every arrival by `factor` (>1 compresses the trace: higher load).
Trace scale_trace(const Trace& trace, double factor);

// Keeps only the first `n` requests (by arrival order). n == 0 keeps all.
Trace truncate_trace(const Trace& trace, std::size_t n);

// Deterministic bursty arrival generator: alternating idle/burst phases,
// Poisson arrivals within each phase at the phase's rate, log-normal lengths
// truncated to >= 1 token.
Trace generate_bursty(const BurstProfile& profile, TimeUs horizon);

// Writes a trace as JSONL records (the same schema load_trace reads).
void save_trace_jsonl(const Trace& trace, const std::string& path);

// Offered load of a trace in requests per second over its arrival span.
double offered_rps(const Trace& trace);

// Solves log-normal (mu, sigma) from (mean, p90); exposed for tests.
void lognormal_params(const LengthDist& dist, double& mu, double& sigma);

}  // namespace fbsim
