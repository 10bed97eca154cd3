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

#include "fbsim/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "fbsim/errors.h"
#include "fbsim/slo.h"
#include "json.hpp"

namespace fbsim {

double RequestReport::ttft_ms() const {
  return emits.empty() ? 0.0 : us_to_ms(emits[0]);
}

std::vector<double> RequestReport::tbt_ms() const {
  std::vector<double> out;
  for (std::size_t j = 1; j < emits.size(); ++j) {
    out.push_back(us_to_ms(emits[j] - emits[j - 1]));
  }
  return out;
}

double RequestReport::max_tpot_ms() const {
  double best = 0.0;
  for (std::size_t j = 1; j < emits.size(); ++j) {
    best = std::max(best, us_to_ms(emits[j] - emits[0]) /
                              static_cast<double>(j));
  }
  return best;
}

double RequestReport::max_tpot_alt_ms() const {
  double best = 0.0;
  for (std::size_t j = 2; j < emits.size(); ++j) {
    best = std::max(best, us_to_ms(emits[j] - emits[0]) /
                              static_cast<double>(j - 1));
  }
  return best;
}

std::vector<RequestReport> request_reports(const std::vector<EventLog>& logs) {
  std::map<std::int64_t, RequestReport> by_id;
  std::map<std::int64_t, bool> any_reject;
  for (const auto& log : logs) {
    for (const auto& e : log.events) {
      switch (e.kind) {
        case EventKind::kArrival: {
          auto& r = by_id[e.req_id];
          r.req_id = e.req_id;
          r.arrival = e.arrival;
          r.ttft_slo = e.ttft_slo;
          r.tpot_slo = e.tpot_slo;
          r.output_len = e.output_len;
          break;
        }
        case EventKind::kAdmissionReject:
          any_reject[e.req_id] = true;
          break;
        case EventKind::kTokenEmit: {
          auto& r = by_id[e.req_id];
          r.emits.push_back(e.t - r.arrival);
          break;
        }
        case EventKind::kRequestDone: {
          by_id[e.req_id].finished = true;
          break;
        }
        default:
          break;
      }
    }
  }
  std::vector<RequestReport> out;
  out.reserve(by_id.size());
  for (auto& [id, r] : by_id) {
    r.tokens_emitted = static_cast<std::int32_t>(r.emits.size());
    // A request counts as rejected only if it was never served anywhere
    // (with rerouting it may be rejected at one node and served at another).
    r.rejected = any_reject.count(id) > 0 && r.emits.empty();
    if (r.rejected) {
      r.met_ttft = false;
      r.met_tpot = false;
    } else {
      r.met_ttft = r.has_ttft() && r.emits[0] <= r.ttft_slo;
      bool tpot_ok = r.finished;
      for (std::size_t j = 1; j < r.emits.size() && tpot_ok; ++j) {
        // exact integer check: (emit_j - emit_0) <= tpot_slo * j
        if (r.emits[j] - r.emits[0] >
            r.tpot_slo * static_cast<TimeUs>(j))
          tpot_ok = false;
      }
      r.met_tpot = tpot_ok;
    }
    out.push_back(std::move(r));
  }
  return out;
}

PercentileRow percentiles(std::vector<double> values) {
  PercentileRow row;
  row.count = values.size();
  if (values.empty()) return row;
  std::sort(values.begin(), values.end());
  auto nearest_rank = [&](double p) {
    const std::size_t n = values.size();
    std::size_t rank = static_cast<std::size_t>(
        std::ceil(p / 100.0 * static_cast<double>(n)));
    if (rank < 1) rank = 1;
    if (rank > n) rank = n;
    return values[rank - 1];
  };
  row.p50 = nearest_rank(50.0);
  row.p95 = nearest_rank(95.0);
  row.p99 = nearest_rank(99.0);
  return row;
}

std::vector<LeadPoint> envelope_lead_series(
    const std::vector<RequestReport>& reports, TimeUs bucket) {
  if (bucket <= 0) throw ValidationError("lead series bucket must be > 0");
  TimeUs t_max = 0;
  for (const auto& r : reports) {
    for (const auto e : r.emits) t_max = std::max(t_max, r.arrival + e);
  }
  std::vector<LeadPoint> series;
  for (TimeUs t = 0; t <= t_max; t += bucket) {
    std::int64_t lead = 0;
    for (const auto& r : reports) {
      if (r.emits.empty()) continue;
      const TimeUs first_emit = r.arrival + r.emits[0];
      const TimeUs last_emit = r.arrival + r.emits.back();
      // in decode phase: first token out, not yet finished at t
      if (first_emit > t) continue;
      if (r.finished && last_emit <= t) continue;
      std::int64_t emitted = 0;
      for (const auto e : r.emits) {
        if (r.arrival + e <= t) ++emitted;
      }
      const TimeUs first_ddl = r.arrival + r.ttft_slo;
      std::int64_t required = 0;
      if (t >= first_ddl) {
        required = static_cast<std::int64_t>((t - first_ddl) / r.tpot_slo) + 1;
        required = std::min<std::int64_t>(required, r.output_len);
      }
      lead += emitted - required;
    }
    series.push_back({t, lead});
  }
  return series;
}

ScenarioReport scenario_report(const std::vector<RequestReport>& reports,
                               double offered, const std::string& name,
                               bool alt_tpot, TimeUs lead_bucket) {
  ScenarioReport rep;
  rep.name = name;
  rep.offered_rps = offered;
  rep.total_requests = reports.size();
  std::vector<double> ttfts, tpots, tpots_lit;
  for (const auto& r : reports) {
    if (r.rejected) ++rep.rejected;
    if (r.finished) ++rep.finished;
    if (r.good()) ++rep.good;
    if (r.has_ttft()) ttfts.push_back(r.ttft_ms());
    if (r.tokens_emitted >= 2) {
      tpots.push_back(r.max_tpot_ms());
      if (r.tokens_emitted >= 3)
        tpots_lit.push_back(r.max_tpot_alt_ms());
    }
  }
  const double frac =
      rep.total_requests == 0
          ? 0.0
          : static_cast<double>(rep.good) /
                static_cast<double>(rep.total_requests);
  rep.slo_violation_rate = 1.0 - frac;
  rep.effective_rps = offered * frac;
  rep.ttft = percentiles(std::move(ttfts));
  rep.max_tpot = percentiles(std::move(tpots));
  if (alt_tpot) {
    rep.max_tpot_alt = percentiles(std::move(tpots_lit));
    rep.has_alt_tpot = true;
  }
  if (lead_bucket > 0) rep.lead = envelope_lead_series(reports, lead_bucket);
  return rep;
}

namespace {

nlohmann::json percentile_json(const PercentileRow& row) {
  nlohmann::json j;
  j["p50"] = row.p50;
  j["p95"] = row.p95;
  j["p99"] = row.p99;
  j["count"] = row.count;
  return j;
}

PercentileRow percentile_from_json(const nlohmann::json& j) {
  PercentileRow row;
  row.p50 = j.value("p50", 0.0);
  row.p95 = j.value("p95", 0.0);
  row.p99 = j.value("p99", 0.0);
  row.count = j.value("count", std::size_t{0});
  return row;
}

}  // namespace

void save_report_json(const ScenarioReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  nlohmann::json j;
  j["scenario"] = r.name;
  j["total_requests"] = r.total_requests;
  j["rejected"] = r.rejected;
  j["finished"] = r.finished;
  j["good"] = r.good;
  j["slo_violation_rate"] = r.slo_violation_rate;
  j["offered_rps"] = r.offered_rps;
  j["effective_rps"] = r.effective_rps;
  j["ttft_ms"] = percentile_json(r.ttft);
  j["max_tpot_ms"] = percentile_json(r.max_tpot);
  if (r.has_alt_tpot) {
    j["max_tpot_alt_ms"] = percentile_json(r.max_tpot_alt);
  }
  if (!r.lead.empty()) {
    nlohmann::json series = nlohmann::json::array();
    for (const auto& p : r.lead) {
      series.push_back({{"t_ms", us_to_ms(p.t)}, {"lead_tokens", p.lead_tokens}});
    }
    j["decode_envelope_lead"] = series;
  }
  out << j.dump(2) << "\n";
}

ScenarioReport load_report_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open report: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("report " + path + ": " + e.what());
  }
  ScenarioReport r;
  r.name = j.value("scenario", "");
  r.total_requests = j.value("total_requests", std::size_t{0});
  r.rejected = j.value("rejected", std::size_t{0});
  r.finished = j.value("finished", std::size_t{0});
  r.good = j.value("good", std::size_t{0});
  r.slo_violation_rate = j.value("slo_violation_rate", 0.0);
  r.offered_rps = j.value("offered_rps", 0.0);
  r.effective_rps = j.value("effective_rps", 0.0);
  if (j.contains("ttft_ms")) r.ttft = percentile_from_json(j["ttft_ms"]);
  if (j.contains("max_tpot_ms"))
    r.max_tpot = percentile_from_json(j["max_tpot_ms"]);
  if (j.contains("max_tpot_alt_ms")) {
    r.max_tpot_alt =
        percentile_from_json(j["max_tpot_alt_ms"]);
    r.has_alt_tpot = true;
  }
  if (j.contains("decode_envelope_lead")) {
    for (const auto& p : j["decode_envelope_lead"]) {
      r.lead.push_back({ms_to_us(p.value("t_ms", 0.0)),
                        p.value("lead_tokens", std::int64_t{0})});
    }
  }
  return r;
}

void save_report_csv(const ScenarioReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  out << "scenario,total_requests,rejected,good,slo_violation_rate,"
         "offered_rps,effective_rps,ttft_p50,ttft_p95,ttft_p99,"
         "tpot_p50,tpot_p95,tpot_p99\n";
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%s,%zu,%zu,%zu,%.6f,%.6f,%.6f,%.3f,%.3f,%.3f,%.3f,%.3f,%.3f\n",
                r.name.c_str(), r.total_requests, r.rejected, r.good,
                r.slo_violation_rate, r.offered_rps, r.effective_rps,
                r.ttft.p50, r.ttft.p95, r.ttft.p99, r.max_tpot.p50,
                r.max_tpot.p95, r.max_tpot.p99);
  out << buf;
}

void save_report_long_csv(const ScenarioReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  out << "scenario,metric,percentile,value\n";
  char buf[256];
  auto row = [&](const char* metric, const char* pct, double v) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%.6f\n", r.name.c_str(), metric,
                  pct, v);
    out << buf;
  };
  row("ttft_ms", "p50", r.ttft.p50);
  row("ttft_ms", "p95", r.ttft.p95);
  row("ttft_ms", "p99", r.ttft.p99);
  row("max_tpot_ms", "p50", r.max_tpot.p50);
  row("max_tpot_ms", "p95", r.max_tpot.p95);
  row("max_tpot_ms", "p99", r.max_tpot.p99);
  row("effective_rps", "value", r.effective_rps);
  row("slo_violation_rate", "value", r.slo_violation_rate);
}

}  // namespace fbsim
