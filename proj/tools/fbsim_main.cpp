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

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fbsim/commands.h"
#include "fbsim/errors.h"

int main(int argc, char** argv) {
  CLI::App app{"fbsim: deterministic simulator for SLO-aware continuous "
               "batching schedulers"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::string samples_path;
  std::string model_out = "model.json";
  std::string log_path;
  std::string report_a, report_b;
  std::vector<double> scales;
  std::vector<std::string> policies;
  std::vector<std::int64_t> budgets;

  auto* run = app.add_subcommand("run", "run one scenario and write reports");
  run->add_option("scenario", scenario_path, "scenario JSON file")->required();

  auto* sweep =
      app.add_subcommand("sweep", "run a load sweep across policies");
  sweep->add_option("scenario", scenario_path, "scenario JSON file")
      ->required();
  sweep->add_option("--scale", scales, "load scale factors")->required();
  sweep->add_option("--policies", policies,
                    "policy filter (default: all four)");

  auto* tune = app.add_subcommand(
      "tune-sarathi", "sweep sarathi token budgets, report the best");
  tune->add_option("scenario", scenario_path, "scenario JSON file")->required();
  tune->add_option("--budgets", budgets, "token budgets to try")->required();

  auto* calibrate = app.add_subcommand(
      "calibrate", "fit the step-time model from a samples CSV");
  calibrate->add_option("samples", samples_path, "calibration CSV")->required();
  calibrate->add_option("--out", model_out, "output model file");

  auto* check =
      app.add_subcommand("check", "validate an event log (replay check)");
  check->add_option("log", log_path, "event log JSONL")->required();

  auto* compare = app.add_subcommand("compare", "diff two report.json files");
  compare->add_option("a", report_a, "first report")->required();
  compare->add_option("b", report_b, "second report")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return fbsim::cmd_run(scenario_path, std::cout);
    if (sweep->parsed())
      return fbsim::cmd_sweep(scenario_path, scales, policies, std::cout);
    if (tune->parsed())
      return fbsim::cmd_tune_sarathi(scenario_path, budgets, std::cout);
    if (calibrate->parsed())
      return fbsim::cmd_calibrate(samples_path, model_out, std::cout);
    if (check->parsed()) return fbsim::cmd_check(log_path, std::cout);
    if (compare->parsed())
      return fbsim::cmd_compare(report_a, report_b, std::cout);
  } catch (const fbsim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return fbsim::kExitConfig;
  } catch (const fbsim::ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return fbsim::kExitConfig;
  } catch (const fbsim::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return fbsim::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return fbsim::kExitRuntime;
  }
  return fbsim::kExitRuntime;
}
