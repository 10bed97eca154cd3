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

#include "fbsim/commands.h"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "fbsim/errors.h"

namespace fbsim {

namespace {

std::vector<EventLog> execute(const Scenario& sc, const Trace& trace,
                              std::vector<RoutingLogEntry>* routing) {
  if (sc.nodes == 1) {
    std::vector<EventLog> logs;
    logs.push_back(run_node(trace, engine_config(sc), sc.horizon));
    return logs;
  }
  std::vector<EngineConfig> cfgs(static_cast<std::size_t>(sc.nodes),
                                 engine_config(sc));
  auto result = run_cluster(trace, cfgs, sc.lb, sc.horizon);
  if (routing) *routing = std::move(result.routing);
  return std::move(result.node_logs);
}

void write_lead_series(const std::vector<RequestReport>& reports,
                       TimeUs bucket, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  out << "t_ms,lead_tokens\n";
  char buf[64];
  for (const auto& p : envelope_lead_series(reports, bucket)) {
    std::snprintf(buf, sizeof(buf), "%.3f,%lld\n", us_to_ms(p.t),
                  static_cast<long long>(p.lead_tokens));
    out << buf;
  }
}

}  // namespace

ScenarioReport run_scenario(const Scenario& sc, bool write_outputs) {
  const Trace trace = materialize_trace(sc);
  std::vector<RoutingLogEntry> routing;
  const auto logs = execute(sc, trace, &routing);
  const auto reports = request_reports(logs);
  auto rep = scenario_report(reports, offered_rps(trace), sc.name,
                             sc.alt_tpot, sc.lead_bucket);
  if (write_outputs) {
    namespace fs = std::filesystem;
    fs::create_directories(sc.out_dir);
    if (logs.size() == 1) {
      save_event_log(logs[0], sc.out_dir + "/events.jsonl");
    } else {
      for (const auto& log : logs) {
        save_event_log(log, sc.out_dir + "/events_node" +
                                std::to_string(log.node_id) + ".jsonl");
      }
      save_routing_log(routing, sc.lb.policy, sc.out_dir + "/routing.jsonl");
    }
    save_report_json(rep, sc.out_dir + "/report.json");
    save_report_csv(rep, sc.out_dir + "/report.csv");
    save_report_long_csv(rep, sc.out_dir + "/report_long.csv");
    write_lead_series(reports, sc.lead_bucket,
                      sc.out_dir + "/envelope_lead.csv");
  }
  return rep;
}

int cmd_run(const std::string& scenario_path, std::ostream& out) {
  const Scenario sc = load_scenario(scenario_path);
  const auto rep = run_scenario(sc);
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "%s: %zu requests, %zu good, violation_rate=%.4f, "
                "effective_rps=%.4f (offered %.4f)\n",
                rep.name.c_str(), rep.total_requests, rep.good,
                rep.slo_violation_rate, rep.effective_rps, rep.offered_rps);
  out << buf << "outputs written to " << sc.out_dir << "\n";
  return kExitOk;
}

std::vector<SweepRow> sweep_scenario(const Scenario& sc,
                                     const std::vector<double>& scales,
                                     const std::vector<Policy>& policies) {
  std::vector<SweepRow> rows;
  for (const auto policy : policies) {
    for (const auto scale : scales) {
      Scenario run_sc = sc;
      run_sc.scheduler.policy = policy;
      run_sc.scale = sc.scale * scale;
      run_sc.name = sc.name + "/" + policy_name(policy);
      const auto rep = run_scenario(run_sc, /*write_outputs=*/false);
      rows.push_back({policy_name(policy), scale, rep.offered_rps,
                      rep.effective_rps, rep.slo_violation_rate});
    }
  }
  return rows;
}

int cmd_sweep(const std::string& scenario_path,
              const std::vector<double>& scales,
              const std::vector<std::string>& policy_names, std::ostream& out) {
  if (scales.empty()) throw ConfigError("sweep requires at least one --scale");
  const Scenario sc = load_scenario(scenario_path);
  std::vector<Policy> policies;
  if (policy_names.empty()) {
    policies = {Policy::kPrefillFirst, Policy::kSarathi, Policy::kFairBatch,
                Policy::kFairBatchPab};
  } else {
    for (const auto& name : policy_names) {
      Policy p;
      if (!parse_policy(name, p)) {
        throw ConfigError("unknown policy in --policies: '" + name + "'");
      }
      policies.push_back(p);
    }
  }
  const auto rows = sweep_scenario(sc, scales, policies);

  namespace fs = std::filesystem;
  fs::create_directories(sc.out_dir);
  std::ofstream csv(sc.out_dir + "/sweep.csv");
  csv << "policy,scale,offered_rps,effective_rps,violation_rate\n";
  out << "policy          scale   offered    effective  viol_rate\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-15s %-7.3f %-10.4f %-10.4f %.4f\n",
                  r.policy.c_str(), r.scale, r.offered_rps, r.effective_rps,
                  r.violation_rate);
    out << buf;
    std::snprintf(buf, sizeof(buf), "%s,%.4f,%.6f,%.6f,%.6f\n",
                  r.policy.c_str(), r.scale, r.offered_rps, r.effective_rps,
                  r.violation_rate);
    csv << buf;
  }
  // peak per policy
  out << "peaks:\n";
  for (const auto policy : policies) {
    double peak = 0.0;
    for (const auto& r : rows) {
      if (r.policy == policy_name(policy)) peak = std::max(peak, r.effective_rps);
    }
    std::snprintf(buf, sizeof(buf), "  %-15s %.4f\n", policy_name(policy),
                  peak);
    out << buf;
  }
  out << "sweep table written to " << sc.out_dir << "/sweep.csv\n";
  return kExitOk;
}

std::vector<TuneRow> tune_sarathi(const Scenario& sc,
                                  const std::vector<std::int64_t>& budgets,
                                  std::int64_t& best) {
  std::vector<TuneRow> rows;
  best = 0;
  double best_rps = -1.0;
  for (const auto budget : budgets) {
    Scenario run_sc = sc;
    run_sc.scheduler.policy = Policy::kSarathi;
    run_sc.scheduler.token_budget = budget;
    run_sc.scheduler.max_chunk = static_cast<std::int32_t>(
        std::min<std::int64_t>(budget, sc.scheduler.max_chunk));
    const auto rep = run_scenario(run_sc, /*write_outputs=*/false);
    rows.push_back({budget, rep.effective_rps});
    // strict > keeps the smallest budget on ties (budgets scanned in order)
    if (rep.effective_rps > best_rps) {
      best_rps = rep.effective_rps;
      best = budget;
    }
  }
  return rows;
}

int cmd_tune_sarathi(const std::string& scenario_path,
                     const std::vector<std::int64_t>& budgets,
                     std::ostream& out) {
  if (budgets.empty()) {
    throw ConfigError("tune-sarathi requires at least one --budgets value");
  }
  std::vector<std::int64_t> sorted = budgets;
  std::sort(sorted.begin(), sorted.end());
  const Scenario sc = load_scenario(scenario_path);
  std::int64_t best = 0;
  const auto rows = tune_sarathi(sc, sorted, best);
  char buf[128];
  out << "token_budget  effective_rps\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-13lld %.4f\n",
                  static_cast<long long>(r.budget), r.effective_rps);
    out << buf;
  }
  out << "best token_budget: " << best << "\n";
  return kExitOk;
}

int cmd_calibrate(const std::string& samples_csv, const std::string& model_out,
                  std::ostream& out) {
  const auto samples = load_calibration_csv(samples_csv);
  FitResult result;
  try {
    result = fit(samples);
  } catch (const CalibrationError& e) {
    throw ConfigError(std::string("calibration failed: ") + e.what());
  }
  save_model(result.model, model_out);
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "fitted a_ms=%.6f b_ms_per_token=%.6f "
                "c_ms_per_context_token=%.8f\n",
                result.model.a_ms, result.model.b_ms, result.model.c_ms);
  out << buf;
  if (result.b_clamped) {
    out << "warning: fitted b was non-positive; clamped to epsilon\n";
  }
  std::snprintf(buf, sizeof(buf), "residual MAPE vs observed: %.4f%%\n",
                100.0 * mape(result.model, samples));
  out << buf << "model written to " << model_out << "\n";
  return kExitOk;
}

int cmd_check(const std::string& log_path, std::ostream& out) {
  const auto log = load_event_log(log_path);
  const auto report = replay_check(log);
  if (report.ok()) {
    out << log_path << ": ok (" << log.events.size() << " events)\n";
    return kExitOk;
  }
  for (const auto& v : report.violations) {
    out << log_path << ": " << v << "\n";
  }
  out << report.violations.size() << " violation(s)\n";
  return kExitCheckFailed;
}

int cmd_compare(const std::string& report_a, const std::string& report_b,
                std::ostream& out) {
  const auto a = load_report_json(report_a);
  const auto b = load_report_json(report_b);
  char buf[256];
  out << "metric               " << a.name << "  ->  " << b.name << "\n";
  auto row = [&](const char* name, double va, double vb) {
    std::snprintf(buf, sizeof(buf), "%-20s %10.4f %10.4f %+10.4f\n", name, va,
                  vb, vb - va);
    out << buf;
  };
  row("effective_rps", a.effective_rps, b.effective_rps);
  row("slo_violation_rate", a.slo_violation_rate, b.slo_violation_rate);
  row("ttft_p50_ms", a.ttft.p50, b.ttft.p50);
  row("ttft_p95_ms", a.ttft.p95, b.ttft.p95);
  row("ttft_p99_ms", a.ttft.p99, b.ttft.p99);
  row("tpot_p50_ms", a.max_tpot.p50, b.max_tpot.p50);
  row("tpot_p95_ms", a.max_tpot.p95, b.max_tpot.p95);
  row("tpot_p99_ms", a.max_tpot.p99, b.max_tpot.p99);
  return kExitOk;
}

}  // namespace fbsim
