#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fbsim/engine.h"
#include "fbsim/errors.h"
#include "fbsim/metrics.h"
#include "fbsim/rng.h"
#include "testutil.h"

using namespace fbsim;

namespace {

const CostModel kModel{5.0, 0.01, 0.0001};

EngineConfig base_config(Policy policy = Policy::kFairBatch,
                         std::int64_t token_budget = 8192) {
  EngineConfig cfg;
  cfg.scheduler.policy = policy;
  cfg.scheduler.token_budget = token_budget;
  cfg.scheduler.max_chunk = static_cast<std::int32_t>(token_budget);
  cfg.scheduler.model = kModel;
  cfg.truth_model = kModel;
  cfg.global_slo = {ms_to_us(500.0), ms_to_us(50.0)};
  return cfg;
}

Request make_request(std::int64_t id, double arrival_ms, std::int32_t prompt,
                     std::int32_t output, double ttft_ms = 500.0,
                     double tpot_ms = 50.0) {
  Request r;
  r.id = id;
  r.arrival = ms_to_us(arrival_ms);
  r.prompt_len = prompt;
  r.output_len = output;
  r.ttft_slo = ms_to_us(ttft_ms);
  r.tpot_slo = ms_to_us(tpot_ms);
  return r;
}

Trace single(const Request& r) {
  Trace t;
  t.requests.push_back(r);
  return t;
}

std::vector<const Event*> events_of_kind(const EventLog& log, EventKind kind) {
  std::vector<const Event*> out;
  for (const auto& e : log.events) {
    if (e.kind == kind) out.push_back(&e);
  }
  return out;
}

std::string serialize(const EventLog& log) {
  const auto path =
      (std::filesystem::temp_directory_path() / "fbsim_log_ser.jsonl").string();
  save_event_log(log, path);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("run_node: one uncontended request, hand-traced timeline") {
  // prefill step: 5 + 0.01*100 = 6 ms, first token at 6 ms (TTFT 6 ms);
  // then two decode steps at 5 + 0.01 + 0.0001*ctx.
  const auto log =
      run_node(single(make_request(0, 0, 100, 3)), base_config(),
               ms_to_us(60'000.0));
  CHECK(!log.incomplete);
  const auto emits = events_of_kind(log, EventKind::kTokenEmit);
  REQUIRE(emits.size() == 3);
  CHECK(emits[0]->t == 6000);
  CHECK(emits[0]->token_idx == 0);
  // decode 1: context 101 -> 5.0201 ms -> 5020 us
  CHECK(emits[1]->t == 6000 + 5020);
  // decode 2: context 102 -> 5.0202 ms -> 5020 us
  CHECK(emits[2]->t == 6000 + 5020 + 5020);
  const auto dones = events_of_kind(log, EventKind::kRequestDone);
  REQUIRE(dones.size() == 1);
  CHECK(dones[0]->t == emits[2]->t);
  CHECK(events_of_kind(log, EventKind::kBatchStart).size() == 3);
  CHECK(replay_check(log).ok());
}

TEST_CASE("task views: decode slack anchors at the earlier of TTFT deadline "
          "and first emission") {
  RequestState rs;
  rs.req = make_request(0, 0, 100, 10);  // ttft 500, tpot 50
  rs.seq = 0;
  rs.prog.prefilled_tokens = 100;
  rs.prog.next_output_idx = 2;

  SUBCASE("early first token tightens the envelope") {
    rs.prog.emitted = {{0, ms_to_us(60.0)}, {1, ms_to_us(110.0)}};
    const auto views = build_task_views({rs}, ms_to_us(120.0));
    REQUIRE(views.size() == 1);
    // anchor 60: deadline = 60 + 2*50 = 160; slack = 40
    CHECK(views[0].slack == ms_to_us(40.0));
    CHECK(views[0].phase == Phase::kDecode);
    CHECK(views[0].context == 102);
  }
  SUBCASE("late first token keeps the TTFT-anchored envelope") {
    rs.prog.emitted = {{0, ms_to_us(700.0)}, {1, ms_to_us(750.0)}};
    const auto views = build_task_views({rs}, ms_to_us(760.0));
    REQUIRE(views.size() == 1);
    // anchor stays 500: deadline = 600; slack = -160
    CHECK(views[0].slack == ms_to_us(-160.0));
  }
  SUBCASE("prefill tasks use the plain TTFT deadline") {
    rs.prog = {};
    rs.prog.prefilled_tokens = 40;
    const auto views = build_task_views({rs}, ms_to_us(100.0));
    REQUIRE(views.size() == 1);
    CHECK(views[0].phase == Phase::kPrefill);
    CHECK(views[0].slack == ms_to_us(400.0));
    CHECK(views[0].new_tokens_available == 60);
    CHECK(views[0].context == 40);
  }
}

TEST_CASE("run_node: empty trace gives an empty complete log") {
  const auto log = run_node(Trace{}, base_config(), ms_to_us(1000.0));
  CHECK(log.events.empty());
  CHECK(!log.incomplete);
}

TEST_CASE("run_node: identical runs are byte-identical") {
  BurstProfile p;
  p.base_rate = 1.0;
  p.burst_rate = 12.0;
  p.burst_duration = ms_to_us(800.0);
  p.idle_duration = ms_to_us(1800.0);
  p.prompt_len = {700.0, 1500.0};
  p.output_len = {150.0, 320.0};
  p.ttft_slo = ms_to_us(500.0);
  p.tpot_slo = ms_to_us(50.0);
  p.seed = 42;
  const auto trace = generate_bursty(p, ms_to_us(15'000.0));
  auto cfg = base_config();
  cfg.noise = {0.05, 7};
  const auto a = run_node(trace, cfg, ms_to_us(120'000.0));
  const auto b = run_node(trace, cfg, ms_to_us(120'000.0));
  CHECK(serialize(a) == serialize(b));
  CHECK(replay_check(a).ok());
}

TEST_CASE("run_node: slow prefill pushes the next deadline underwater") {
  // Under the prefill-first policy with 4096-token steps, an 81920-token
  // prompt takes ~1s to prefill; token 1's deadline (550 ms) has passed
  // before token 0 even appears.
  const auto req = make_request(0, 0, 81'920, 2);
  const auto log = run_node(single(req), base_config(Policy::kPrefillFirst, 4096),
                            ms_to_us(600'000.0));
  const auto emits = events_of_kind(log, EventKind::kTokenEmit);
  REQUIRE(emits.size() == 2);
  const TimeUs t_first = emits[0]->t;
  CHECK(t_first > ms_to_us(900.0));
  RequestProgress prog;
  prog.next_output_idx = 1;
  prog.prefilled_tokens = req.prompt_len;
  CHECK(request_deadline(req, prog) == ms_to_us(550.0));
  CHECK(slack(req, prog, t_first) < 0);
}

TEST_CASE("run_node: horizon cuts a backlogged run and flags it") {
  Trace t;
  for (int i = 0; i < 32; ++i) {
    t.requests.push_back(make_request(i, 0, 20'000, 50));
  }
  const auto log = run_node(t, base_config(), ms_to_us(500.0));
  CHECK(log.incomplete);
  CHECK(replay_check(log).ok());  // prefix is still self-consistent
}

TEST_CASE("run_node: max_active bounds concurrent running requests") {
  auto cfg = base_config();
  cfg.max_active = 2;
  Node node(0, cfg);
  for (int i = 0; i < 6; ++i) {
    node.enqueue(make_request(i, 0, 50, 8), 0);
  }
  TimeUs now = 0;
  for (int step = 0; step < 40 && node.has_live_requests(); ++step) {
    const auto end = node.begin_step(now);
    if (!end) break;
    CHECK(node.running_count() <= 2);
    node.complete_step();
    now = *end;
  }
  CHECK(!node.has_live_requests());
}

TEST_CASE("pab admission: oversized prompt is rejected and logged") {
  auto cfg = base_config(Policy::kFairBatchPab);
  // empty-node budget: (500 - 5) / 0.0101 = 49009 tokens
  Trace t;
  t.requests.push_back(make_request(0, 0, 60'000, 4));
  t.requests.push_back(make_request(1, 0, 100, 4));
  const auto log = run_node(t, cfg, ms_to_us(60'000.0));
  const auto rejects = events_of_kind(log, EventKind::kAdmissionReject);
  REQUIRE(rejects.size() == 1);
  CHECK(rejects[0]->req_id == 0);
  CHECK(rejects[0]->pab_tokens == 49'009);
  // the rejected request never emits; the short one completes
  for (const auto* e : events_of_kind(log, EventKind::kTokenEmit)) {
    CHECK(e->req_id == 1);
  }
  CHECK(!log.incomplete);
  CHECK(replay_check(log).ok());
}

TEST_CASE("step outcomes: decode entries emit exactly one token, prefill "
          "chunks emit only on completion") {
  auto cfg = base_config(Policy::kSarathi, 512);
  cfg.scheduler.max_chunk = 256;
  Node node(0, cfg);
  node.enqueue(make_request(0, 0, 600, 3), 0);
  TimeUs now = 0;
  std::vector<StepOutcome> outcomes;
  while (node.has_live_requests()) {
    const auto end = node.begin_step(now);
    REQUIRE(end.has_value());
    outcomes.push_back(node.complete_step());
    now = *end;
  }
  // 600-token prompt in 256-token chunks: 256, 256, 88(final -> token 0)
  REQUIRE(outcomes.size() == 5);
  CHECK(outcomes[0].emitted.empty());
  CHECK(outcomes[1].emitted.empty());
  REQUIRE(outcomes[2].emitted.size() == 1);
  CHECK(outcomes[2].emitted[0].token_idx == 0);
  CHECK(outcomes[3].emitted.size() == 1);
  CHECK(outcomes[4].emitted.size() == 1);
}

TEST_CASE("replay_check: clean log, duplicate emit, decreasing timestamp") {
  const auto log =
      run_node(single(make_request(0, 0, 100, 5)), base_config(),
               ms_to_us(60'000.0));
  REQUIRE(replay_check(log).ok());

  SUBCASE("duplicated token_emit is exactly one violation") {
    EventLog bad = log;
    std::size_t emit_idx = 0;
    for (std::size_t i = 0; i < bad.events.size(); ++i) {
      if (bad.events[i].kind == EventKind::kTokenEmit) emit_idx = i;
    }
    // duplicate the last emit inside its batch
    bad.events.insert(bad.events.begin() + static_cast<long>(emit_idx),
                      bad.events[emit_idx]);
    const auto report = replay_check(bad);
    CHECK(report.violations.size() == 1);
  }

  SUBCASE("decreasing timestamps are flagged") {
    EventLog bad = log;
    REQUIRE(bad.events.size() > 3);
    bad.events[2].t = bad.events[1].t - 1000;
    const auto report = replay_check(bad);
    bool found_ordering = false;
    for (const auto& v : report.violations) {
      if (v.find("timestamp decreases") != std::string::npos)
        found_ordering = true;
    }
    CHECK(found_ordering);
  }

  SUBCASE("emit for an unknown request is flagged") {
    EventLog bad = log;
    for (std::size_t i = 0; i < bad.events.size(); ++i) {
      if (bad.events[i].kind == EventKind::kTokenEmit) {
        bad.events[i].req_id = 77;
        break;
      }
    }
    CHECK(!replay_check(bad).ok());
  }
}

TEST_CASE("event log JSONL round-trips through save and load") {
  auto cfg = base_config(Policy::kFairBatchPab);
  Trace t;
  t.requests.push_back(make_request(0, 0, 60'000, 4));
  t.requests.push_back(make_request(1, 3, 120, 4));
  const auto log = run_node(t, cfg, ms_to_us(60'000.0));
  const auto path =
      (std::filesystem::temp_directory_path() / "fbsim_roundtrip.jsonl")
          .string();
  save_event_log(log, path);
  const auto loaded = load_event_log(path);
  REQUIRE(loaded.events.size() == log.events.size());
  CHECK(loaded.incomplete == log.incomplete);
  for (std::size_t i = 0; i < log.events.size(); ++i) {
    CHECK(loaded.events[i].kind == log.events[i].kind);
    CHECK(loaded.events[i].t == log.events[i].t);
    CHECK(loaded.events[i].req_id == log.events[i].req_id);
  }
  // fidelity: saving the loaded log reproduces the bytes
  const auto path2 =
      (std::filesystem::temp_directory_path() / "fbsim_roundtrip2.jsonl")
          .string();
  save_event_log(loaded, path2);
  std::ifstream a(path), b(path2);
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
}

TEST_CASE("work conservation: no empty step while work is pending") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    BurstProfile p;
    p.base_rate = 1.0;
    p.burst_rate = rng.uniform(4.0, 12.0);
    p.burst_duration = ms_to_us(1000.0);
    p.idle_duration = ms_to_us(2000.0);
    p.prompt_len = {400.0, 900.0};
    p.output_len = {60.0, 140.0};
    p.ttft_slo = ms_to_us(500.0);
    p.tpot_slo = ms_to_us(50.0);
    p.seed = 1000 + static_cast<std::uint64_t>(trial);
    const auto trace = generate_bursty(p, ms_to_us(8000.0));
    if (trace.requests.empty()) continue;
    const auto log = run_node(trace, base_config(), ms_to_us(600'000.0));
    CHECK(!log.incomplete);
    for (const auto* e : events_of_kind(log, EventKind::kBatchStart)) {
      CHECK(e->new_tokens > 0);  // a started batch always carries work
    }
  }
}

TEST_CASE("tpot safety: decode tokens stay within one step of the envelope") {
  // Truth noise off and scheduler model == truth model; only traces whose
  // whole demand passes the admission budget (no rejects) are checked.
  Rng rng(9);
  int feasible = 0;
  for (int trial = 0; trial < 30 && feasible < 12; ++trial) {
    BurstProfile p;
    p.base_rate = rng.uniform(0.5, 2.0);
    p.burst_rate = rng.uniform(3.0, 8.0);
    p.burst_duration = ms_to_us(rng.uniform(500.0, 1500.0));
    p.idle_duration = ms_to_us(rng.uniform(1000.0, 3000.0));
    p.prompt_len = {rng.uniform(200.0, 800.0), 1600.0};
    p.output_len = {rng.uniform(40.0, 120.0), 260.0};
    p.ttft_slo = ms_to_us(500.0);
    p.tpot_slo = ms_to_us(50.0);
    p.seed = 5000 + static_cast<std::uint64_t>(trial);
    const auto trace = generate_bursty(p, ms_to_us(10'000.0));
    if (trace.requests.empty()) continue;

    const auto gate =
        run_node(trace, base_config(Policy::kFairBatchPab), ms_to_us(900'000.0));
    if (!events_of_kind(gate, EventKind::kAdmissionReject).empty()) continue;
    ++feasible;

    const auto log = run_node(trace, base_config(), ms_to_us(900'000.0));
    REQUIRE(!log.incomplete);
    // build arrival/slo tables and per-batch durations
    std::vector<double> batch_actual;
    for (const auto* e : events_of_kind(log, EventKind::kBatchEnd)) {
      batch_actual.push_back(e->actual_ms);
    }
    std::size_t batch_idx = 0;
    struct Info {
      TimeUs arrival, ttft, tpot;
    };
    std::map<std::int64_t, Info> info;
    std::map<std::int64_t, std::int32_t> seen;
    for (const auto& e : log.events) {
      if (e.kind == EventKind::kArrival) {
        info[e.req_id] = {e.arrival, e.ttft_slo, e.tpot_slo};
      } else if (e.kind == EventKind::kBatchEnd) {
        ++batch_idx;
      } else if (e.kind == EventKind::kTokenEmit && e.token_idx >= 1) {
        const auto& in = info.at(e.req_id);
        const TimeUs deadline =
            in.arrival + in.ttft + in.tpot * static_cast<TimeUs>(e.token_idx);
        const TimeUs step_us = ms_to_us(batch_actual.at(batch_idx));
        CHECK(e.t <= deadline + step_us + 1);
      }
    }
  }
  CHECK(feasible >= 5);
}

TEST_CASE("earlier mid-stream tokens can worsen max TBT yet stay in envelope") {
  // Two emission schedules for one request (ttft 500, tpot 50): the ideal
  // pace, and one where tokens 2 and 3 appear early. The early schedule
  // still meets every per-token deadline but its worst token gap grows.
  const TimeUs ttft = ms_to_us(500.0);
  const TimeUs tpot = ms_to_us(50.0);
  RequestReport ideal;
  ideal.arrival = 0;
  ideal.ttft_slo = ttft;
  ideal.tpot_slo = tpot;
  ideal.output_len = 5;
  ideal.finished = true;
  ideal.emits = {ms_to_us(500.0), ms_to_us(550.0), ms_to_us(600.0),
                 ms_to_us(650.0), ms_to_us(700.0)};
  RequestReport early = ideal;
  early.emits = {ms_to_us(500.0), ms_to_us(550.0), ms_to_us(560.0),
                 ms_to_us(570.0), ms_to_us(700.0)};

  auto max_tbt = [](const RequestReport& r) {
    double best = 0.0;
    for (const auto g : r.tbt_ms()) best = std::max(best, g);
    return best;
  };
  CHECK(max_tbt(ideal) == doctest::Approx(50.0));
  CHECK(max_tbt(early) == doctest::Approx(130.0));
  CHECK(max_tbt(early) > max_tbt(ideal));
  for (const auto& r : {ideal, early}) {
    for (std::size_t j = 0; j < r.emits.size(); ++j) {
      CHECK(r.emits[j] <= ttft + tpot * static_cast<TimeUs>(j));
    }
  }
}
