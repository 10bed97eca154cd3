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

#include <cmath>
#include <cstdint>

namespace fbsim {

// Timestamps and durations are integer microseconds internally so that event
// ordering never depends on float rounding. External interfaces (files, CLI,
// cost model) speak fractional milliseconds.
using TimeUs = std::int64_t;

constexpr TimeUs kUsPerMs = 1000;

inline TimeUs ms_to_us(double ms) {
  return static_cast<TimeUs>(std::llround(ms * 1000.0));
}

inline double us_to_ms(TimeUs us) { return static_cast<double>(us) / 1000.0; }

}  // namespace fbsim
