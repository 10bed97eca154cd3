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

#include "fbsim/scenario.h"

#include <fstream>
#include <set>

#include "fbsim/errors.h"
#include "fbsim/rng.h"

namespace fbsim {

namespace {

void reject_unknown_keys(const nlohmann::json& j, const std::string& section,
                         const std::set<std::string>& allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw ConfigError("unknown key '" + section + "." + it.key() + "'");
    }
  }
}

double require_number(const nlohmann::json& j, const std::string& section,
                      const std::string& key) {
  if (!j.contains(key)) {
    throw ConfigError("missing required key '" + section + "." + key + "'");
  }
  if (!j[key].is_number()) {
    throw ConfigError("key '" + section + "." + key + "' must be a number");
  }
  return j[key].get<double>();
}

double number_or(const nlohmann::json& j, const std::string& section,
                 const std::string& key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number()) {
    throw ConfigError("key '" + section + "." + key + "' must be a number");
  }
  return j[key].get<double>();
}

CostModel model_from_json(const nlohmann::json& j, const std::string& section) {
  reject_unknown_keys(j, section,
                      {"a_ms", "b_ms_per_token", "c_ms_per_context_token"});
  CostModel m;
  m.a_ms = require_number(j, section, "a_ms");
  m.b_ms = require_number(j, section, "b_ms_per_token");
  m.c_ms = require_number(j, section, "c_ms_per_context_token");
  return m;
}

nlohmann::json model_to_json(const CostModel& m) {
  nlohmann::json j;
  j["a_ms"] = m.a_ms;
  j["b_ms_per_token"] = m.b_ms;
  j["c_ms_per_context_token"] = m.c_ms;
  return j;
}

}  // namespace

Scenario scenario_from_json(const nlohmann::json& j) {
  reject_unknown_keys(
      j, "",
      {"name", "trace", "slo", "scheduler", "cost_model", "cluster", "run"});
  Scenario sc;
  sc.name = j.value("name", "scenario");

  if (!j.contains("trace")) throw ConfigError("missing section 'trace'");
  const auto& jt = j["trace"];
  reject_unknown_keys(jt, "trace",
                      {"file", "format", "bursty", "max_requests", "scale"});
  if (jt.contains("file")) {
    sc.has_file = true;
    sc.trace_file = jt["file"].get<std::string>();
    const std::string fmt = jt.value("format", "jsonl");
    if (fmt == "jsonl") {
      sc.trace_format = TraceFormat::kJsonl;
    } else if (fmt == "csv") {
      sc.trace_format = TraceFormat::kCsv;
    } else {
      throw ConfigError("trace.format must be 'jsonl' or 'csv', got '" + fmt +
                        "'");
    }
  }
  if (jt.contains("bursty")) {
    sc.has_bursty = true;
    const auto& jb = jt["bursty"];
    reject_unknown_keys(
        jb, "trace.bursty",
        {"base_rate", "burst_rate", "burst_duration_ms", "idle_duration_ms",
         "prompt_mean", "prompt_p90", "output_mean", "output_p90", "seed",
         "horizon_ms"});
    sc.bursty.base_rate = require_number(jb, "trace.bursty", "base_rate");
    sc.bursty.burst_rate = require_number(jb, "trace.bursty", "burst_rate");
    sc.bursty.burst_duration =
        ms_to_us(require_number(jb, "trace.bursty", "burst_duration_ms"));
    sc.bursty.idle_duration =
        ms_to_us(require_number(jb, "trace.bursty", "idle_duration_ms"));
    sc.bursty.prompt_len.mean = require_number(jb, "trace.bursty", "prompt_mean");
    sc.bursty.prompt_len.p90 = require_number(jb, "trace.bursty", "prompt_p90");
    sc.bursty.output_len.mean = require_number(jb, "trace.bursty", "output_mean");
    sc.bursty.output_len.p90 = require_number(jb, "trace.bursty", "output_p90");
    if (!jb.contains("seed")) {
      throw ConfigError("missing required key 'trace.bursty.seed'");
    }
    sc.bursty.seed = jb["seed"].get<std::uint64_t>();
    sc.bursty_horizon =
        ms_to_us(require_number(jb, "trace.bursty", "horizon_ms"));
  }
  if (sc.has_file == sc.has_bursty) {
    throw ConfigError("trace must name exactly one of 'file' or 'bursty'");
  }
  sc.max_requests = static_cast<std::size_t>(
      number_or(jt, "trace", "max_requests", 0.0));
  sc.scale = number_or(jt, "trace", "scale", 1.0);
  if (!(sc.scale > 0.0)) throw ConfigError("trace.scale must be > 0");

  if (!j.contains("slo")) throw ConfigError("missing section 'slo'");
  const auto& js = j["slo"];
  reject_unknown_keys(js, "slo", {"ttft_ms", "tpot_ms"});
  sc.slo.ttft_slo = ms_to_us(require_number(js, "slo", "ttft_ms"));
  sc.slo.tpot_slo = ms_to_us(require_number(js, "slo", "tpot_ms"));
  if (sc.slo.ttft_slo <= 0 || sc.slo.tpot_slo <= 0) {
    throw ConfigError("slo targets must be positive");
  }
  sc.bursty.ttft_slo = sc.slo.ttft_slo;
  sc.bursty.tpot_slo = sc.slo.tpot_slo;

  if (!j.contains("cost_model")) throw ConfigError("missing section 'cost_model'");
  const auto& jc = j["cost_model"];
  reject_unknown_keys(jc, "cost_model", {"truth", "noise_amplitude"});
  if (!jc.contains("truth")) {
    throw ConfigError("missing required key 'cost_model.truth'");
  }
  sc.truth = model_from_json(jc["truth"], "cost_model.truth");
  sc.noise_amplitude = number_or(jc, "cost_model", "noise_amplitude", 0.0);
  if (sc.noise_amplitude < 0.0 || sc.noise_amplitude >= 1.0) {
    throw ConfigError("cost_model.noise_amplitude must be in [0, 1)");
  }

  if (!j.contains("scheduler")) throw ConfigError("missing section 'scheduler'");
  const auto& jsch = j["scheduler"];
  reject_unknown_keys(jsch, "scheduler",
                      {"policy", "token_budget", "max_chunk", "model"});
  const std::string pol = jsch.value("policy", "");
  if (!parse_policy(pol, sc.scheduler.policy)) {
    throw ConfigError(
        "scheduler.policy must be one of prefill_first, sarathi, fairbatch, "
        "fairbatch_pab; got '" +
        pol + "'");
  }
  sc.scheduler.token_budget = static_cast<std::int64_t>(
      number_or(jsch, "scheduler", "token_budget", 2048.0));
  sc.scheduler.max_chunk = static_cast<std::int32_t>(
      number_or(jsch, "scheduler", "max_chunk",
                static_cast<double>(sc.scheduler.token_budget)));
  if (jsch.contains("model")) {
    sc.scheduler.model = model_from_json(jsch["model"], "scheduler.model");
    sc.scheduler_model_explicit = true;
  } else {
    sc.scheduler.model = sc.truth;
  }

  const auto jcl = j.value("cluster", nlohmann::json::object());
  reject_unknown_keys(jcl, "cluster",
                      {"nodes", "policy", "report_interval_steps",
                       "report_latency_ms", "w_waiting", "w_running",
                       "retry_reroute"});
  sc.nodes = static_cast<int>(number_or(jcl, "cluster", "nodes", 1.0));
  if (sc.nodes < 1) throw ConfigError("cluster.nodes must be >= 1");
  const std::string lbp = jcl.value("policy", "pab_lb");
  if (!parse_lb_policy(lbp, sc.lb.policy)) {
    throw ConfigError("cluster.policy must be count_lb or pab_lb; got '" + lbp +
                      "'");
  }
  sc.lb.report_interval_steps = static_cast<int>(
      number_or(jcl, "cluster", "report_interval_steps", 1.0));
  sc.lb.report_latency =
      ms_to_us(number_or(jcl, "cluster", "report_latency_ms", 0.0));
  if (sc.lb.report_latency < 0) {
    throw ConfigError("cluster.report_latency_ms must be >= 0");
  }
  sc.lb.w_waiting = number_or(jcl, "cluster", "w_waiting", 1.0);
  sc.lb.w_running = number_or(jcl, "cluster", "w_running", 1.0);
  sc.lb.retry_reroute = jcl.value("retry_reroute", false);

  if (!j.contains("run")) throw ConfigError("missing section 'run'");
  const auto& jr = j["run"];
  reject_unknown_keys(jr, "run",
                      {"horizon_ms", "seed", "out_dir", "max_active",
                       "lead_bucket_ms", "alt_tpot"});
  sc.horizon = ms_to_us(require_number(jr, "run", "horizon_ms"));
  if (sc.horizon <= 0) throw ConfigError("run.horizon_ms must be > 0");
  if (!jr.contains("seed")) {
    throw ConfigError("missing required key 'run.seed' (seeds are explicit)");
  }
  sc.seed = jr["seed"].get<std::uint64_t>();
  sc.out_dir = jr.value("out_dir", "out");
  sc.max_active =
      static_cast<std::int32_t>(number_or(jr, "run", "max_active", 0.0));
  sc.lead_bucket = ms_to_us(number_or(jr, "run", "lead_bucket_ms", 1000.0));
  sc.alt_tpot = jr.value("alt_tpot", false);

  validate_scheduler_config(sc.scheduler);
  return sc;
}

nlohmann::json scenario_to_json(const Scenario& sc) {
  nlohmann::json j;
  j["name"] = sc.name;
  nlohmann::json jt;
  if (sc.has_file) {
    jt["file"] = sc.trace_file;
    jt["format"] = sc.trace_format == TraceFormat::kJsonl ? "jsonl" : "csv";
  }
  if (sc.has_bursty) {
    nlohmann::json jb;
    jb["base_rate"] = sc.bursty.base_rate;
    jb["burst_rate"] = sc.bursty.burst_rate;
    jb["burst_duration_ms"] = us_to_ms(sc.bursty.burst_duration);
    jb["idle_duration_ms"] = us_to_ms(sc.bursty.idle_duration);
    jb["prompt_mean"] = sc.bursty.prompt_len.mean;
    jb["prompt_p90"] = sc.bursty.prompt_len.p90;
    jb["output_mean"] = sc.bursty.output_len.mean;
    jb["output_p90"] = sc.bursty.output_len.p90;
    jb["seed"] = sc.bursty.seed;
    jb["horizon_ms"] = us_to_ms(sc.bursty_horizon);
    jt["bursty"] = jb;
  }
  jt["max_requests"] = sc.max_requests;
  jt["scale"] = sc.scale;
  j["trace"] = jt;

  j["slo"]["ttft_ms"] = us_to_ms(sc.slo.ttft_slo);
  j["slo"]["tpot_ms"] = us_to_ms(sc.slo.tpot_slo);

  j["cost_model"]["truth"] = model_to_json(sc.truth);
  j["cost_model"]["noise_amplitude"] = sc.noise_amplitude;

  j["scheduler"]["policy"] = policy_name(sc.scheduler.policy);
  j["scheduler"]["token_budget"] = sc.scheduler.token_budget;
  j["scheduler"]["max_chunk"] = sc.scheduler.max_chunk;
  if (sc.scheduler_model_explicit) {
    j["scheduler"]["model"] = model_to_json(sc.scheduler.model);
  }

  j["cluster"]["nodes"] = sc.nodes;
  j["cluster"]["policy"] = lb_policy_name(sc.lb.policy);
  j["cluster"]["report_interval_steps"] = sc.lb.report_interval_steps;
  j["cluster"]["report_latency_ms"] = us_to_ms(sc.lb.report_latency);
  j["cluster"]["w_waiting"] = sc.lb.w_waiting;
  j["cluster"]["w_running"] = sc.lb.w_running;
  j["cluster"]["retry_reroute"] = sc.lb.retry_reroute;

  j["run"]["horizon_ms"] = us_to_ms(sc.horizon);
  j["run"]["seed"] = sc.seed;
  j["run"]["out_dir"] = sc.out_dir;
  j["run"]["max_active"] = sc.max_active;
  j["run"]["lead_bucket_ms"] = us_to_ms(sc.lead_bucket);
  j["run"]["alt_tpot"] = sc.alt_tpot;
  return j;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("scenario " + path + ": " + e.what());
  }
  return scenario_from_json(j);
}

void save_scenario(const Scenario& sc, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out << scenario_to_json(sc).dump(2) << "\n";
}

Trace materialize_trace(const Scenario& sc) {
  Trace trace;
  if (sc.has_file) {
    trace = load_trace(sc.trace_file, sc.trace_format, sc.slo);
  } else {
    trace = generate_bursty(sc.bursty, sc.bursty_horizon);
  }
  if (sc.scale != 1.0) trace = scale_trace(trace, sc.scale);
  trace = truncate_trace(trace, sc.max_requests);
  return trace;
}

EngineConfig engine_config(const Scenario& sc) {
  EngineConfig cfg;
  cfg.scheduler = sc.scheduler;
  cfg.truth_model = sc.truth;
  cfg.noise.amplitude = sc.noise_amplitude;
  cfg.noise.seed = derive_seed(sc.seed, 3);  // named stream: truth noise
  cfg.global_slo = {sc.slo.ttft_slo, sc.slo.tpot_slo};
  cfg.max_active = sc.max_active;
  return cfg;
}

}  // namespace fbsim
