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

#include "fbsim/costmodel.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fbsim/errors.h"
#include "fbsim/rng.h"
#include "json.hpp"

namespace fbsim {

namespace {

constexpr double kMinB = 1e-9;

// Solves the 3x3 (or 2x2) normal equations with partial pivoting. Columns are
// scaled to unit diagonal first; the 3-parameter problem is benign after that.
// Returns false when the design is rank deficient.
bool solve_normal(std::array<std::array<double, 3>, 3>& m,
                  std::array<double, 3>& rhs, int n,
                  std::array<double, 3>& out) {
  std::array<double, 3> scale{1.0, 1.0, 1.0};
  for (int i = 0; i < n; ++i) {
    if (m[i][i] > 0.0) scale[i] = 1.0 / std::sqrt(m[i][i]);
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) m[i][j] *= scale[i] * scale[j];
    rhs[i] *= scale[i];
  }
  std::array<int, 3> perm{0, 1, 2};
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r) {
      if (std::fabs(m[perm[r]][col]) > std::fabs(m[perm[pivot]][col]))
        pivot = r;
    }
    std::swap(perm[col], perm[pivot]);
    const double p = m[perm[col]][col];
    if (std::fabs(p) < 1e-10) return false;
    for (int r = col + 1; r < n; ++r) {
      const double f = m[perm[r]][col] / p;
      for (int j = col; j < n; ++j) m[perm[r]][j] -= f * m[perm[col]][j];
      rhs[perm[r]] -= f * rhs[perm[col]];
    }
  }
  for (int col = n - 1; col >= 0; --col) {
    double v = rhs[perm[col]];
    for (int j = col + 1; j < n; ++j) v -= m[perm[col]][j] * out[j];
    out[col] = v / m[perm[col]][col];
  }
  for (int i = 0; i < n; ++i) out[i] *= scale[i];
  return true;
}

FitResult fit_impl(const std::vector<CalibrationSample>& samples,
                   bool with_context) {
  const int n = with_context ? 3 : 2;
  if (samples.size() < static_cast<std::size_t>(n)) {
    throw CalibrationError("need at least " + std::to_string(n) +
                           " calibration samples");
  }
  std::array<std::array<double, 3>, 3> m{};
  std::array<double, 3> rhs{};
  for (const auto& s : samples) {
    if (!(s.observed_ms > 0.0)) {
      throw CalibrationError("observed_time_ms must be positive");
    }
    const std::array<double, 3> x{1.0, static_cast<double>(s.total_new_tokens),
                                  static_cast<double>(s.total_context)};
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) m[i][j] += x[i] * x[j];
      rhs[i] += x[i] * s.observed_ms;
    }
  }
  std::array<double, 3> coef{};
  if (!solve_normal(m, rhs, n, coef)) {
    throw CalibrationError(
        "rank-deficient calibration design: token and context columns do not "
        "span the model");
  }
  FitResult result;
  result.model.a_ms = std::max(0.0, coef[0]);
  result.model.b_ms = coef[1];
  result.model.c_ms = with_context ? std::max(0.0, coef[2]) : 0.0;
  if (result.model.b_ms <= 0.0) {
    result.model.b_ms = kMinB;
    result.b_clamped = true;
  }
  return result;
}

}  // namespace

double predict_step_time_ms(const CostModel& model, std::int64_t new_tokens,
                            std::int64_t context) {
  return model.a_ms + model.b_ms * static_cast<double>(new_tokens) +
         model.c_ms * static_cast<double>(context);
}

FitResult fit(const std::vector<CalibrationSample>& samples) {
  return fit_impl(samples, true);
}

FitResult fit_token_only(const std::vector<CalibrationSample>& samples) {
  return fit_impl(samples, false);
}

double mape(const CostModel& model,
            const std::vector<CalibrationSample>& samples) {
  if (samples.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : samples) {
    const double pred =
        predict_step_time_ms(model, s.total_new_tokens, s.total_context);
    sum += std::fabs(pred - s.observed_ms) / s.observed_ms;
  }
  return sum / static_cast<double>(samples.size());
}

double ground_truth_step_time_ms(const CostModel& model,
                                 std::int64_t new_tokens, std::int64_t context,
                                 const NoiseSpec& noise,
                                 std::uint64_t step_ordinal) {
  const double base = predict_step_time_ms(model, new_tokens, context);
  if (noise.amplitude == 0.0) return base;
  const double u = 2.0 * keyed_uniform(noise.seed, step_ordinal) - 1.0;
  return base * (1.0 + noise.amplitude * u);
}

std::vector<CalibrationSample> load_calibration_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open calibration file: " + path);
  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError("calibration file is empty: " + path);
  }
  // normalize header
  std::string header = line;
  header.erase(std::remove_if(header.begin(), header.end(),
                              [](char c) { return c == ' ' || c == '\r'; }),
               header.end());
  if (header != "total_new_tokens,total_context,observed_time_ms") {
    throw ParseError(
        "calibration line 1: expected header "
        "total_new_tokens,total_context,observed_time_ms");
  }
  std::vector<CalibrationSample> samples;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::stringstream ss(line);
    std::string f1, f2, f3;
    if (!std::getline(ss, f1, ',') || !std::getline(ss, f2, ',') ||
        !std::getline(ss, f3)) {
      throw ParseError("calibration line " + std::to_string(line_no) +
                       ": expected 3 fields");
    }
    CalibrationSample s;
    try {
      s.total_new_tokens = std::stoll(f1);
      s.total_context = std::stoll(f2);
      s.observed_ms = std::stod(f3);
    } catch (const std::exception&) {
      throw ParseError("calibration line " + std::to_string(line_no) +
                       ": unparsable numeric field");
    }
    samples.push_back(s);
  }
  return samples;
}

void save_model(const CostModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  nlohmann::json j;
  j["a_ms"] = model.a_ms;
  j["b_ms_per_token"] = model.b_ms;
  j["c_ms_per_context_token"] = model.c_ms;
  out << j.dump(2) << "\n";
}

CostModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open model file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("model file " + path + ": " + e.what());
  }
  CostModel m;
  try {
    m.a_ms = j.at("a_ms").get<double>();
    m.b_ms = j.at("b_ms_per_token").get<double>();
    m.c_ms = j.at("c_ms_per_context_token").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("model file " + path + ": " + e.what());
  }
  return m;
}

}  // namespace fbsim
