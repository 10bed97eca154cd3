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

#include "fbsim/time.h"

namespace fbsim {

// Linear step-time model: batch_time = a + b * new_tokens + c * context.
// The same type serves as the scheduler's estimator and, separately seeded,
// as the engine's ground-truth step-time generator.
struct CostModel {
  double a_ms = 0.0;  // fixed per-step overhead
  double b_ms = 0.0;  // per new token
  double c_ms = 0.0;  // per context token
};

struct CalibrationSample {
  std::int64_t total_new_tokens = 0;
  std::int64_t total_context = 0;
  double observed_ms = 0.0;
};

double predict_step_time_ms(const CostModel& model, std::int64_t new_tokens,
                            std::int64_t context);

struct FitResult {
  CostModel model;
  bool b_clamped = false;  // fitted b was non-positive and clamped up
};

// Ordinary least squares over (1, new_tokens, context). Requires >= 3 samples
// with a full-rank design; throws CalibrationError otherwise.
FitResult fit(const std::vector<CalibrationSample>& samples);

// Token-only estimator: OLS over (1, new_tokens), ignoring context. This is
// the strawman the linear model is compared against.
FitResult fit_token_only(const std::vector<CalibrationSample>& samples);

// Mean absolute percentage error of the model against observed sample times.
double mape(const CostModel& model,
            const std::vector<CalibrationSample>& samples);

// Multiplicative noise with mean 1: factor = 1 + amplitude * u, u ~ U[-1, 1).
struct NoiseSpec {
  double amplitude = 0.0;
  std::uint64_t seed = 0;
};

// Ground-truth step duration for a batch with the given token totals.
// Deterministic per (noise.seed, step_ordinal).
double ground_truth_step_time_ms(const CostModel& model,
                                 std::int64_t new_tokens, std::int64_t context,
                                 const NoiseSpec& noise,
                                 std::uint64_t step_ordinal);

// Calibration samples file: CSV with header
// total_new_tokens,total_context,observed_time_ms
std::vector<CalibrationSample> load_calibration_csv(const std::string& path);

// Model file: JSON with keys a_ms, b_ms_per_token, c_ms_per_context_token.
void save_model(const CostModel& model, const std::string& path);
CostModel load_model(const std::string& path);

}  // namespace fbsim
