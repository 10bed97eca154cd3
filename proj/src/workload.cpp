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

#include "fbsim/workload.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fbsim/errors.h"
#include "fbsim/rng.h"
#include "json.hpp"

namespace fbsim {

namespace {

constexpr double kZ90 = 1.2815515655446004;  // standard normal 90th percentile

struct RawRecord {
  double arrival_ms = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t output_tokens = 0;
  bool has_ttft = false;
  bool has_tpot = false;
  double ttft_ms = 0;
  double tpot_ms = 0;
};

Request to_request(const RawRecord& rec, const SloDefaults& defaults,
                   std::size_t line_no) {
  Request r;
  r.arrival = ms_to_us(rec.arrival_ms);
  if (rec.prompt_tokens < 1 || rec.output_tokens < 1) {
    throw ValidationError("trace line " + std::to_string(line_no) +
                          ": prompt_tokens and output_tokens must be >= 1");
  }
  r.prompt_len = static_cast<std::int32_t>(rec.prompt_tokens);
  r.output_len = static_cast<std::int32_t>(rec.output_tokens);
  r.ttft_slo = rec.has_ttft ? ms_to_us(rec.ttft_ms) : defaults.ttft_slo;
  r.tpot_slo = rec.has_tpot ? ms_to_us(rec.tpot_ms) : defaults.tpot_slo;
  if (r.ttft_slo <= 0 || r.tpot_slo <= 0) {
    throw ValidationError("trace line " + std::to_string(line_no) +
                          ": SLO targets must be positive");
  }
  if (r.arrival < 0) {
    throw ValidationError("trace line " + std::to_string(line_no) +
                          ": arrival_ms must be >= 0");
  }
  return r;
}

std::vector<RawRecord> parse_jsonl(std::istream& in) {
  std::vector<RawRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("trace line " + std::to_string(line_no) + ": " +
                       e.what());
    }
    RawRecord rec;
    try {
      rec.arrival_ms = j.at("arrival_ms").get<double>();
      rec.prompt_tokens = j.at("prompt_tokens").get<std::int64_t>();
      rec.output_tokens = j.at("output_tokens").get<std::int64_t>();
      if (j.contains("ttft_slo_ms")) {
        rec.has_ttft = true;
        rec.ttft_ms = j["ttft_slo_ms"].get<double>();
      }
      if (j.contains("tpot_slo_ms")) {
        rec.has_tpot = true;
        rec.tpot_ms = j["tpot_slo_ms"].get<double>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("trace line " + std::to_string(line_no) + ": " +
                       e.what());
    }
    out.push_back(rec);
  }
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // trim
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    fields.push_back(b == std::string::npos ? ""
                                            : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

std::vector<RawRecord> parse_csv(std::istream& in) {
  std::vector<RawRecord> out;
  std::string line;
  if (!std::getline(in, line)) return out;  // empty file -> empty trace
  const auto header = split_csv_line(line);
  auto col = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
  };
  const int c_arrival = col("arrival_ms");
  const int c_prompt = col("prompt_tokens");
  const int c_output = col("output_tokens");
  const int c_ttft = col("ttft_slo_ms");
  const int c_tpot = col("tpot_slo_ms");
  if (c_arrival < 0 || c_prompt < 0 || c_output < 0) {
    throw ParseError(
        "trace line 1: CSV header must name arrival_ms, prompt_tokens, "
        "output_tokens");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_csv_line(line);
    auto get = [&](int idx) -> const std::string& {
      static const std::string kEmpty;
      if (idx < 0 || static_cast<std::size_t>(idx) >= fields.size())
        return kEmpty;
      return fields[static_cast<std::size_t>(idx)];
    };
    RawRecord rec;
    try {
      rec.arrival_ms = std::stod(get(c_arrival));
      rec.prompt_tokens = std::stoll(get(c_prompt));
      rec.output_tokens = std::stoll(get(c_output));
      if (!get(c_ttft).empty()) {
        rec.has_ttft = true;
        rec.ttft_ms = std::stod(get(c_ttft));
      }
      if (!get(c_tpot).empty()) {
        rec.has_tpot = true;
        rec.tpot_ms = std::stod(get(c_tpot));
      }
    } catch (const std::exception&) {
      throw ParseError("trace line " + std::to_string(line_no) +
                       ": unparsable numeric field");
    }
    out.push_back(rec);
  }
  return out;
}

}  // namespace

void validate_request(const Request& r) {
  if (r.prompt_len < 1)
    throw ValidationError("request " + std::to_string(r.id) +
                          ": prompt_len must be >= 1");
  if (r.output_len < 1)
    throw ValidationError("request " + std::to_string(r.id) +
                          ": output_len must be >= 1");
  if (r.ttft_slo <= 0 || r.tpot_slo <= 0)
    throw ValidationError("request " + std::to_string(r.id) +
                          ": SLO targets must be positive");
}

Trace load_trace(const std::string& path, TraceFormat format,
                 const SloDefaults& defaults) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open trace file: " + path);
  const auto raw =
      format == TraceFormat::kJsonl ? parse_jsonl(in) : parse_csv(in);

  Trace trace;
  trace.name = path;
  trace.requests.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    // line number of record i: JSONL counts blank lines too, but for error
    // purposes the per-record parse already reported exact lines; here we
    // only validate semantics.
    trace.requests.push_back(to_request(raw[i], defaults, i + 1));
  }
  std::stable_sort(trace.requests.begin(), trace.requests.end(),
                   [](const Request& a, const Request& b) {
                     return a.arrival < b.arrival;
                   });
  for (std::size_t i = 0; i < trace.requests.size(); ++i) {
    trace.requests[i].id = static_cast<std::int64_t>(i);
  }
  return trace;
}

Trace scale_trace(const Trace& trace, double factor) {
  if (!(factor > 0.0)) {
    throw ValidationError("scale factor must be > 0");
  }
  Trace out = trace;
  for (auto& r : out.requests) {
    r.arrival = static_cast<TimeUs>(
        std::llround(static_cast<double>(r.arrival) / factor));
  }
  return out;
}

Trace truncate_trace(const Trace& trace, std::size_t n) {
  if (n == 0 || n >= trace.requests.size()) return trace;
  Trace out;
  out.name = trace.name;
  out.requests.assign(trace.requests.begin(), trace.requests.begin() + n);
  return out;
}

void lognormal_params(const LengthDist& dist, double& mu, double& sigma) {
  if (!(dist.mean > 0.0) || !(dist.p90 > 0.0)) {
    throw ValidationError("length distribution mean and p90 must be > 0");
  }
  const double ratio = std::log(dist.p90 / dist.mean);
  // mean = exp(mu + sigma^2/2), p90 = exp(mu + z*sigma)
  // => sigma^2/2 - z*sigma + ratio = 0
  const double disc = kZ90 * kZ90 - 2.0 * ratio;
  sigma = disc >= 0.0 ? kZ90 - std::sqrt(disc) : kZ90;
  if (sigma < 0.0) sigma = 0.0;
  mu = std::log(dist.mean) - 0.5 * sigma * sigma;
}

Trace generate_bursty(const BurstProfile& profile, TimeUs horizon) {
  if (horizon <= 0) throw ValidationError("horizon must be > 0");
  if (profile.base_rate < 0.0 || profile.burst_rate < profile.base_rate) {
    throw ValidationError("require burst_rate >= base_rate >= 0");
  }
  if (profile.ttft_slo <= 0 || profile.tpot_slo <= 0) {
    throw ValidationError("burst profile SLO targets must be positive");
  }
  double prompt_mu, prompt_sigma, output_mu, output_sigma;
  lognormal_params(profile.prompt_len, prompt_mu, prompt_sigma);
  lognormal_params(profile.output_len, output_mu, output_sigma);

  Rng arrivals(derive_seed(profile.seed, 1));
  Rng lengths(derive_seed(profile.seed, 2));

  Trace trace;
  trace.name = "bursty";
  // Phases alternate idle -> burst -> idle ... starting with an idle phase.
  TimeUs phase_start = 0;
  bool in_burst = false;
  while (phase_start < horizon) {
    const TimeUs phase_len =
        in_burst ? profile.burst_duration : profile.idle_duration;
    const double rate = in_burst ? profile.burst_rate : profile.base_rate;
    const TimeUs phase_end = std::min<TimeUs>(phase_start + phase_len, horizon);
    if (rate > 0.0) {
      double t_ms = us_to_ms(phase_start);
      const double end_ms = us_to_ms(phase_end);
      for (;;) {
        t_ms += arrivals.exponential(rate) * 1000.0;  // rate is per second
        if (t_ms >= end_ms) break;
        Request r;
        r.arrival = ms_to_us(t_ms);
        r.prompt_len = static_cast<std::int32_t>(std::max<std::int64_t>(
            1, std::llround(lengths.lognormal(prompt_mu, prompt_sigma))));
        r.output_len = static_cast<std::int32_t>(std::max<std::int64_t>(
            1, std::llround(lengths.lognormal(output_mu, output_sigma))));
        r.ttft_slo = profile.ttft_slo;
        r.tpot_slo = profile.tpot_slo;
        trace.requests.push_back(r);
      }
    }
    phase_start = phase_end;
    in_burst = !in_burst;
  }
  std::stable_sort(trace.requests.begin(), trace.requests.end(),
                   [](const Request& a, const Request& b) {
                     return a.arrival < b.arrival;
                   });
  for (std::size_t i = 0; i < trace.requests.size(); ++i) {
    trace.requests[i].id = static_cast<std::int64_t>(i);
    validate_request(trace.requests[i]);
  }
  return trace;
}

void save_trace_jsonl(const Trace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  char buf[256];
  for (const auto& r : trace.requests) {
    std::snprintf(buf, sizeof(buf),
                  "{\"arrival_ms\":%.3f,\"prompt_tokens\":%d,"
                  "\"output_tokens\":%d,\"ttft_slo_ms\":%.3f,"
                  "\"tpot_slo_ms\":%.3f}\n",
                  us_to_ms(r.arrival), r.prompt_len, r.output_len,
                  us_to_ms(r.ttft_slo), us_to_ms(r.tpot_slo));
    out << buf;
  }
}

double offered_rps(const Trace& trace) {
  if (trace.requests.empty()) return 0.0;
  const TimeUs span = trace.requests.back().arrival;
  if (span <= 0) return static_cast<double>(trace.requests.size());
  return static_cast<double>(trace.requests.size()) /
         (us_to_ms(span) / 1000.0);
}

}  // namespace fbsim
