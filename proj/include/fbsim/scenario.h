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

#include "fbsim/cluster.h"
#include "fbsim/engine.h"
#include "fbsim/workload.h"
#include "json.hpp"

namespace fbsim {

// Experiment configuration. JSON sections: trace, slo, scheduler, cost_model,
// cluster, run. The schema is documented in the README; unknown keys are
// rejected so typos fail loudly.
struct Scenario {
  std::string name;

  // trace: either a file or a bursty generator profile
  bool has_file = false;
  std::string trace_file;
  TraceFormat trace_format = TraceFormat::kJsonl;
  bool has_bursty = false;
  BurstProfile bursty;
  TimeUs bursty_horizon = 0;
  std::size_t max_requests = 0;  // 0 = all
  double scale = 1.0;

  SloDefaults slo;

  SchedulerConfig scheduler;  // scheduler.model defaults to the truth model
  bool scheduler_model_explicit = false;

  CostModel truth;
  double noise_amplitude = 0.0;

  int nodes = 1;
  LbConfig lb;

  TimeUs horizon = 0;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  std::int32_t max_active = 0;
  TimeUs lead_bucket = ms_to_us(1000.0);
  bool alt_tpot = false;
};

Scenario scenario_from_json(const nlohmann::json& j);
nlohmann::json scenario_to_json(const Scenario& sc);

// Throws ConfigError naming the offending field.
Scenario load_scenario(const std::string& path);
void save_scenario(const Scenario& sc, const std::string& path);

// Loads or generates the trace, then applies scale and truncation.
Trace materialize_trace(const Scenario& sc);

// Engine configuration for one node (identical nodes unless callers override).
EngineConfig engine_config(const Scenario& sc);

}  // namespace fbsim
