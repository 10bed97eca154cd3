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

#include "fbsim/engine.h"
#include "fbsim/time.h"

namespace fbsim {

// Per-request outcome extracted from event logs. Emission timestamps are kept
// in arrival-relative microseconds; SLO checks use exact integer arithmetic.
struct RequestReport {
  std::int64_t req_id = -1;
  TimeUs arrival = 0;
  TimeUs ttft_slo = 0;
  TimeUs tpot_slo = 0;
  std::int32_t output_len = 0;
  std::int32_t tokens_emitted = 0;
  bool rejected = false;
  bool finished = false;
  std::vector<TimeUs> emits;  // arrival-relative emission times, index = token
  bool has_ttft() const { return tokens_emitted >= 1; }
  double ttft_ms() const;           // valid when has_ttft()
  std::vector<double> tbt_ms() const;
  // max over j>=1 of (emit_j - emit_0)/j, arrival-relative; 0 for <2 tokens.
  double max_tpot_ms() const;
  // alternative variant with denominator j-1 (mean gap), defined for j>=2.
  double max_tpot_alt_ms() const;
  bool met_ttft = false;
  bool met_tpot = false;
  bool good() const { return !rejected && finished && met_ttft && met_tpot; }
};

std::vector<RequestReport> request_reports(
    const std::vector<EventLog>& logs);

struct PercentileRow {
  double p50 = 0.0;
  double p95 = 0.0;
  double p99 = 0.0;
  std::size_t count = 0;
};

// Nearest-rank percentile over the values; count 0 yields zeros.
PercentileRow percentiles(std::vector<double> values);

struct LeadPoint {
  TimeUs t = 0;
  std::int64_t lead_tokens = 0;
};

// Aggregate decode progress relative to the envelope requirement, sampled at
// bucket boundaries: sum over in-decode requests of (emitted - required).
std::vector<LeadPoint> envelope_lead_series(
    const std::vector<RequestReport>& reports, TimeUs bucket);

struct ScenarioReport {
  std::string name;
  std::size_t total_requests = 0;
  std::size_t rejected = 0;
  std::size_t finished = 0;
  std::size_t good = 0;
  double slo_violation_rate = 0.0;
  double offered_rps = 0.0;
  double effective_rps = 0.0;
  PercentileRow ttft;      // over requests with a first token
  PercentileRow max_tpot;  // over requests with >= 2 emitted tokens
  PercentileRow max_tpot_alt;  // populated when requested
  bool has_alt_tpot = false;
  std::vector<LeadPoint> lead;  // decode-envelope lead per time bucket
};

ScenarioReport scenario_report(const std::vector<RequestReport>& reports,
                               double offered, const std::string& name,
                               bool alt_tpot = false,
                               TimeUs lead_bucket = 0);  // 0 skips the series

// Exports: full JSON, one-row CSV, and long-format CSV
// (scenario,metric,percentile,value) for external plotting.
void save_report_json(const ScenarioReport& r, const std::string& path);
ScenarioReport load_report_json(const std::string& path);
void save_report_csv(const ScenarioReport& r, const std::string& path);
void save_report_long_csv(const ScenarioReport& r, const std::string& path);

}  // namespace fbsim
