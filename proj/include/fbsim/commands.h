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
#include <iosfwd>
#include <string>
#include <vector>

#include "fbsim/metrics.h"
#include "fbsim/scenario.h"

namespace fbsim {

// Exit codes shared by the CLI: 0 success, 1 config error, 2 runtime error,
// 3 acceptance-check failure.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitCheckFailed = 3;

// Runs a scenario end to end and writes event logs plus reports under
// sc.out_dir. Returns the scenario report.
ScenarioReport run_scenario(const Scenario& sc, bool write_outputs = true);

int cmd_run(const std::string& scenario_path, std::ostream& out);

struct SweepRow {
  std::string policy;
  double scale = 0.0;
  double offered_rps = 0.0;
  double effective_rps = 0.0;
  double violation_rate = 0.0;
};

std::vector<SweepRow> sweep_scenario(const Scenario& sc,
                                     const std::vector<double>& scales,
                                     const std::vector<Policy>& policies);

int cmd_sweep(const std::string& scenario_path,
              const std::vector<double>& scales,
              const std::vector<std::string>& policies, std::ostream& out);

struct TuneRow {
  std::int64_t budget = 0;
  double effective_rps = 0.0;
};

// Returns rows in budget order plus the winning budget (ties -> smallest).
std::vector<TuneRow> tune_sarathi(const Scenario& sc,
                                  const std::vector<std::int64_t>& budgets,
                                  std::int64_t& best);

int cmd_tune_sarathi(const std::string& scenario_path,
                     const std::vector<std::int64_t>& budgets,
                     std::ostream& out);

int cmd_calibrate(const std::string& samples_csv, const std::string& model_out,
                  std::ostream& out);

int cmd_check(const std::string& log_path, std::ostream& out);

int cmd_compare(const std::string& report_a, const std::string& report_b,
                std::ostream& out);

}  // namespace fbsim
