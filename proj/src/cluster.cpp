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

#include "fbsim/cluster.h"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>
#include <memory>
#include <set>

#include "fbsim/errors.h"

namespace fbsim {

namespace {
constexpr TimeUs kInf = std::numeric_limits<TimeUs>::max();
}

const char* lb_policy_name(LbPolicy p) {
  return p == LbPolicy::kCountLb ? "count_lb" : "pab_lb";
}

bool parse_lb_policy(const std::string& name, LbPolicy& out) {
  if (name == "count_lb") {
    out = LbPolicy::kCountLb;
  } else if (name == "pab_lb") {
    out = LbPolicy::kPabLb;
  } else {
    return false;
  }
  return true;
}

MetricReport make_report(const Node& node, TimeUs now, LbPolicy policy) {
  MetricReport rep;
  rep.node = node.id();
  rep.emitted_at = now;
  rep.waiting = node.waiting_count();
  rep.running = node.running_count();
  if (policy == LbPolicy::kPabLb) rep.pab_tokens = node.current_pab(now);
  return rep;
}

void apply_report(ClusterView& view, const MetricReport& report) {
  auto& nv = view.nodes.at(static_cast<std::size_t>(report.node));
  if (nv.has_report && report.emitted_at < nv.report_t) {
    // FIFO delivery per node; a newer report never regresses the view.
    return;
  }
  nv.has_report = true;
  nv.report_t = report.emitted_at;
  nv.pab_tokens = report.pab_tokens;
  nv.waiting = report.waiting;
  nv.running = report.running;
  nv.pab_decrement = 0;
  nv.count_increment = 0;
}

int route(ClusterView& view, const Request& req, const LbConfig& cfg) {
  if (view.nodes.empty()) throw UsageError("route requires at least one node");
  int chosen = -1;
  if (cfg.policy == LbPolicy::kPabLb) {
    // Prefer the roomiest node that fits the prompt outright.
    for (std::size_t i = 0; i < view.nodes.size(); ++i) {
      const std::int64_t eff = view.nodes[i].effective_pab();
      if (eff < req.prompt_len) continue;
      if (chosen < 0 || eff > view.nodes[static_cast<std::size_t>(chosen)]
                                  .effective_pab()) {
        chosen = static_cast<int>(i);
      }
    }
    if (chosen < 0) {
      // Best effort: the node may still reject on admission.
      for (std::size_t i = 0; i < view.nodes.size(); ++i) {
        if (chosen < 0 || view.nodes[i].effective_pab() >
                              view.nodes[static_cast<std::size_t>(chosen)]
                                  .effective_pab()) {
          chosen = static_cast<int>(i);
        }
      }
    }
    view.nodes[static_cast<std::size_t>(chosen)].pab_decrement +=
        req.prompt_len;
  } else {
    double best = 0.0;
    for (std::size_t i = 0; i < view.nodes.size(); ++i) {
      const double score = view.nodes[i].count_score(cfg);
      if (chosen < 0 || score < best) {
        chosen = static_cast<int>(i);
        best = score;
      }
    }
    view.nodes[static_cast<std::size_t>(chosen)].count_increment += 1;
  }
  return chosen;
}

void save_routing_log(const std::vector<RoutingLogEntry>& log, LbPolicy policy,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  for (const auto& e : log) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "{\"t_ms\":%.3f,\"req_id\":%" PRId64
                  ",\"node\":%d,\"policy\":\"%s\",\"view_snapshot\":[",
                  us_to_ms(e.t), e.req_id, e.node, lb_policy_name(policy));
    out << buf;
    for (std::size_t i = 0; i < e.view_snapshot.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%s%.3f", i ? "," : "",
                    e.view_snapshot[i]);
      out << buf;
    }
    out << "]}\n";
  }
}

ClusterResult run_cluster(const Trace& trace,
                          const std::vector<EngineConfig>& node_cfgs,
                          const LbConfig& lb, TimeUs horizon) {
  if (node_cfgs.empty()) {
    throw UsageError("run_cluster requires at least one node");
  }
  if (lb.report_latency < 0) {
    throw ValidationError("report_latency must be >= 0");
  }
  const int n = static_cast<int>(node_cfgs.size());
  std::vector<std::unique_ptr<Node>> nodes;
  nodes.reserve(node_cfgs.size());
  for (int i = 0; i < n; ++i) {
    nodes.push_back(std::make_unique<Node>(i, node_cfgs[i]));
  }

  ClusterView view;
  view.nodes.resize(node_cfgs.size());
  struct InFlight {
    TimeUs deliver_at;
    MetricReport report;
  };
  std::deque<InFlight> deliveries;  // FIFO; constant latency keeps it sorted

  ClusterResult result;
  std::set<std::int64_t> retried;

  auto emit_report = [&](const Node& node, TimeUs now) {
    deliveries.push_back(
        {now + lb.report_latency, make_report(node, now, lb.policy)});
  };

  auto snapshot = [&]() {
    std::vector<double> snap;
    snap.reserve(view.nodes.size());
    for (const auto& nv : view.nodes) {
      snap.push_back(lb.policy == LbPolicy::kPabLb
                         ? static_cast<double>(nv.effective_pab())
                         : nv.count_score(lb));
    }
    return snap;
  };

  auto route_request = [&](const Request& r, TimeUs now) {
    const int target = route(view, r, lb);
    result.routing.push_back({now, r.id, target, snapshot()});
    nodes[static_cast<std::size_t>(target)]->enqueue(r, now);
  };

  // Initial reports so routing has a view before the first boundary.
  for (const auto& node : nodes) emit_report(*node, 0);

  std::size_t arr = 0;
  const auto& reqs = trace.requests;

  for (;;) {
    TimeUs t = kInf;
    for (const auto& node : nodes) {
      if (node->busy()) t = std::min(t, node->step_end());
    }
    const bool any_busy = t != kInf;
    if (arr < reqs.size()) t = std::min(t, reqs[arr].arrival);
    if (!deliveries.empty()) t = std::min(t, deliveries.front().deliver_at);
    if (t == kInf) break;
    if (!any_busy && t >= horizon) break;

    // 1) step completions, then report emission at the boundary
    for (auto& node : nodes) {
      if (node->busy() && node->step_end() == t) {
        node->complete_step();
        if (lb.report_interval_steps > 0 &&
            node->steps_completed() %
                    static_cast<std::uint64_t>(lb.report_interval_steps) ==
                0) {
          emit_report(*node, t);
        }
      }
    }
    // 2) report deliveries due by now
    while (!deliveries.empty() && deliveries.front().deliver_at <= t) {
      apply_report(view, deliveries.front().report);
      deliveries.pop_front();
    }
    // 3) new arrivals at exactly t
    while (arr < reqs.size() && reqs[arr].arrival == t) {
      route_request(reqs[arr], t);
      ++arr;
    }
    // 4) start steps; a rejected-and-rerouted request may wake another node
    if (t < horizon) {
      bool progress = true;
      while (progress) {
        progress = false;
        for (auto& node : nodes) {
          if (!node->busy()) node->begin_step(t);
          for (const auto& r : node->drain_rejects()) {
            if (lb.retry_reroute && retried.insert(r.id).second) {
              route_request(r, t);
              progress = true;
            }
          }
        }
      }
    }
  }

  bool live = arr < reqs.size();
  for (auto& node : nodes) {
    live = live || node->has_live_requests();
  }
  for (auto& node : nodes) {
    EventLog log = std::move(node->log());
    log.incomplete = live;
    result.node_logs.push_back(std::move(log));
  }
  result.incomplete = live;
  return result;
}

}  // namespace fbsim
