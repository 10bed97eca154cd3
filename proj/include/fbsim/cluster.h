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
#include "fbsim/workload.h"

namespace fbsim {

enum class LbPolicy { kCountLb, kPabLb };

const char* lb_policy_name(LbPolicy p);
bool parse_lb_policy(const std::string& name, LbPolicy& out);

struct LbConfig {
  LbPolicy policy = LbPolicy::kPabLb;
  // Reports are emitted every `report_interval_steps` batch boundaries and
  // delivered to the balancer's view after `report_latency`.
  int report_interval_steps = 1;
  TimeUs report_latency = 0;
  double w_waiting = 1.0;
  double w_running = 1.0;
  // Reroute a node-rejected request once to another node (default off;
  // a second rejection is terminal).
  bool retry_reroute = false;
};

struct MetricReport {
  int node = 0;
  TimeUs emitted_at = 0;
  std::int64_t pab_tokens = 0;
  std::int64_t waiting = 0;
  std::int64_t running = 0;
};

// The balancer's possibly-stale per-node snapshot with local decrements.
struct NodeView {
  bool has_report = false;
  TimeUs report_t = -1;
  std::int64_t pab_tokens = 0;
  std::int64_t waiting = 0;
  std::int64_t running = 0;
  std::int64_t pab_decrement = 0;    // prompt tokens routed since last report
  std::int64_t count_increment = 0;  // requests routed since last report

  std::int64_t effective_pab() const { return pab_tokens - pab_decrement; }
  double count_score(const LbConfig& cfg) const {
    return cfg.w_waiting * static_cast<double>(waiting + count_increment) +
           cfg.w_running * static_cast<double>(running);
  }
};

struct ClusterView {
  std::vector<NodeView> nodes;
};

// Snapshot of a node's truth at a batch boundary: waiting/running counts and,
// for budget-based balancing, the node's current prefill admission budget.
MetricReport make_report(const Node& node, TimeUs now, LbPolicy policy);

// Applies a delivered report; decrements reset on every newer report.
void apply_report(ClusterView& view, const MetricReport& report);

// Picks a node for the request and applies the local decrement/increment.
// pab_lb: best effective PAB among nodes that fit the prompt, falling back to
// the best overall. count_lb: smallest weighted waiting/running score.
// Ties break toward the lowest node id.
int route(ClusterView& view, const Request& req, const LbConfig& cfg);

struct RoutingLogEntry {
  TimeUs t = 0;
  std::int64_t req_id = -1;
  int node = 0;
  std::vector<double> view_snapshot;  // per-node score at decision time
};

struct ClusterResult {
  std::vector<EventLog> node_logs;
  std::vector<RoutingLogEntry> routing;
  bool incomplete = false;
};

void save_routing_log(const std::vector<RoutingLogEntry>& log,
                      LbPolicy policy, const std::string& path);

// Data-parallel cluster simulation: one global clock interleaving arrivals
// (routed on arrival), node steps, and report deliveries. Node configs may be
// heterogeneous. Deterministic given the scenario seeds.
ClusterResult run_cluster(const Trace& trace,
                          const std::vector<EngineConfig>& node_cfgs,
                          const LbConfig& lb, TimeUs horizon);

}  // namespace fbsim
