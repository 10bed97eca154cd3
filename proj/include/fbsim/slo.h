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
#include <utility>
#include <vector>

#include "fbsim/errors.h"
#include "fbsim/time.h"
#include "fbsim/workload.h"

namespace fbsim {

// Envelope-deadline SLO formulation. Each output token j has the deadline
//   arrival + ttft_slo + tpot_slo * j
// (token 0 is the first output token, produced by the step that completes the
// final prefill chunk). The request's current deadline is its next token's
// deadline, and slack is how far that deadline lies ahead of the clock.

struct SloTargets {
  TimeUs ttft_slo = 0;
  TimeUs tpot_slo = 0;
};

struct RequestProgress {
  std::int32_t next_output_idx = 0;  // == number of tokens emitted
  std::int32_t prefilled_tokens = 0;
  std::vector<std::pair<std::int32_t, TimeUs>> emitted;  // (idx, timestamp)
};

inline TimeUs token_deadline(const Request& req, std::int32_t j) {
  return req.arrival + req.ttft_slo + req.tpot_slo * static_cast<TimeUs>(j);
}

inline TimeUs request_deadline(const Request& req,
                               const RequestProgress& prog) {
  if (prog.next_output_idx >= req.output_len) {
    throw UsageError("request_deadline called on a finished request");
  }
  return token_deadline(req, prog.next_output_idx);
}

// Negative slack means the next token is already late.
inline TimeUs slack(const Request& req, const RequestProgress& prog,
                    TimeUs now) {
  return request_deadline(req, prog) - now;
}

}  // namespace fbsim
