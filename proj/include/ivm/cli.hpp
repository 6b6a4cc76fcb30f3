// Copyright (c) 2026 ivm-fusion contributors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/**
 * @file cli.hpp
 * @brief Command-line harness: scenario simulation, pipeline runs, ATE
 *        evaluation and model sweeps.
 */

#ifndef IVM_CLI_HPP
#define IVM_CLI_HPP

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ivm/evaluate.hpp"
#include "ivm/pipeline.hpp"
#include "ivm/scenario.hpp"
#include "ivm/stream_io.hpp"

namespace ivm {

/**
 * Pipeline config file: one `key value` pair per line, '#' comments.
 * Unknown keys are an error. Keys: model, window_span, fixed_k, k_max,
 * i_max, dL_min, nu0, beta0, v0_floor, recompute_v0, dcs_phi, cdce_sigma,
 * clock_offset_sqrt_info, clock_drift_sqrt_info, prior_sqrt_info,
 * em_max_iter, em_tol, solver_max_iterations, solver_lambda_init.
 */
inline void parse_pipeline_config(std::istream& is, PipelineConfig* cfg) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key.empty()) continue;
    bool ok = true;
    if (key == "model") {
      std::string name;
      ok = static_cast<bool>(ls >> name);
      if (ok) cfg->model = parse_selector(name);
    } else if (key == "window_span") ok = static_cast<bool>(ls >> cfg->window_span);
    else if (key == "fixed_k") ok = static_cast<bool>(ls >> cfg->fixed_k);
    else if (key == "k_max") ok = static_cast<bool>(ls >> cfg->complexity.k_max);
    else if (key == "i_max") ok = static_cast<bool>(ls >> cfg->complexity.i_max);
    else if (key == "dL_min") ok = static_cast<bool>(ls >> cfg->complexity.dL_min);
    else if (key == "nu0") ok = static_cast<bool>(ls >> cfg->nu0);
    else if (key == "beta0") ok = static_cast<bool>(ls >> cfg->beta0);
    else if (key == "v0_floor") ok = static_cast<bool>(ls >> cfg->v0_floor);
    else if (key == "recompute_v0") {
      int v = 1;
      ok = static_cast<bool>(ls >> v);
      cfg->recompute_v0 = v != 0;
    } else if (key == "dcs_phi") ok = static_cast<bool>(ls >> cfg->dcs_phi);
    else if (key == "cdce_sigma") ok = static_cast<bool>(ls >> cfg->cdce_sigma);
    else if (key == "clock_offset_sqrt_info") ok = static_cast<bool>(ls >> cfg->clock_offset_sqrt_info);
    else if (key == "clock_drift_sqrt_info") ok = static_cast<bool>(ls >> cfg->clock_drift_sqrt_info);
    else if (key == "prior_sqrt_info") ok = static_cast<bool>(ls >> cfg->prior_sqrt_info);
    else if (key == "em_max_iter") ok = static_cast<bool>(ls >> cfg->em_max_iter);
    else if (key == "em_tol") ok = static_cast<bool>(ls >> cfg->em_tol);
    else if (key == "solver_max_iterations") ok = static_cast<bool>(ls >> cfg->solver.max_iterations);
    else if (key == "solver_lambda_init") ok = static_cast<bool>(ls >> cfg->solver.lambda_init);
    else {
      throw std::runtime_error("config: unknown key '" + key + "' at line " +
                               std::to_string(line_no));
    }
    if (!ok) {
      throw std::runtime_error("config: malformed value for '" + key + "' at line " +
                               std::to_string(line_no));
    }
  }
  cfg->validate();
}

namespace detail {

inline std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::istringstream is(csv);
  std::string item;
  while (std::getline(is, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct CliArgs {
  std::string command;
  std::string input;
  std::string output;
  std::string config_path;
  std::string truth_path;
  std::string model = "ivm";
  std::string models = "gaussian,dcs,cdce,sm_em,sm_vbi,sm_em_cl,ivm";
  std::string mixture_log;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

inline PipelineConfig load_config(const CliArgs& args) {
  PipelineConfig cfg;
  if (!args.config_path.empty()) {
    std::ifstream is(args.config_path);
    if (!is) throw std::runtime_error("cannot open config: " + args.config_path);
    parse_pipeline_config(is, &cfg);
  }
  return cfg;
}

inline int cmd_simulate(const CliArgs& args) {
  std::ifstream is(args.input);
  if (!is) throw std::runtime_error("cannot open scenario: " + args.input);
  ScenarioSpec spec = parse_scenario(is);
  if (args.seed_set) spec.seed = args.seed;
  const auto [stream, truth] = generate(spec);
  (void)truth;  // embedded in the stream as gt records
  save_stream_file(args.output, stream);
  std::cout << "wrote " << stream.pseudoranges.size() << " pseudoranges, "
            << stream.odometry.size() << " odometry records, " << stream.ground_truth.size()
            << " ground-truth poses to " << args.output << '\n';
  return 0;
}

inline int cmd_run(const CliArgs& args) {
  PipelineConfig cfg = load_config(args);
  cfg.model = parse_selector(args.model);
  const StreamData stream = load_stream_file(args.input);
  Pipeline pipeline(cfg);
  std::vector<EpochResult> results;
  if (args.mixture_log.empty()) {
    results = pipeline.run(stream);
  } else {
    std::ofstream log(args.mixture_log);
    if (!log) throw std::runtime_error("cannot open mixture log: " + args.mixture_log);
    results = pipeline.run(stream, &log);
  }
  std::ofstream os(args.output);
  if (!os) throw std::runtime_error("cannot open output: " + args.output);
  write_results_csv(os, results);
  double runtime = 0.0;
  for (const auto& r : results) runtime += r.runtime_s;
  std::cout << results.size() << " epochs, model " << selector_name(cfg.model)
            << ", pipeline time " << runtime << " s\n";
  return 0;
}

inline int cmd_evaluate(const CliArgs& args) {
  std::ifstream est_is(args.input);
  if (!est_is) throw std::runtime_error("cannot open estimates: " + args.input);
  const auto rows = read_results_csv(est_is);
  const StreamData truth = load_stream_file(args.truth_path);
  const AteReport report = ate(rows, truth.ground_truth);
  std::cout << "epochs " << report.series.size() << '\n'
            << "mean_ate_m " << report.mean_ate << '\n'
            << "median_ate_m " << report.median_ate << '\n'
            << "total_runtime_s " << report.total_runtime_s << '\n';
  return 0;
}

inline int cmd_sweep(const CliArgs& args) {
  const StreamData stream = load_stream_file(args.input);
  if (stream.ground_truth.empty()) {
    throw std::runtime_error("sweep: stream has no ground-truth records");
  }
  std::vector<ModelRun> rows;
  for (const auto& name : split_list(args.models)) {
    PipelineConfig cfg = load_config(args);
    cfg.model = parse_selector(name);
    Pipeline pipeline(cfg);
    const auto results = pipeline.run(stream);
    const AteReport report = ate(rows_from_results(results), stream.ground_truth);
    rows.push_back(ModelRun{name, report.mean_ate, report.total_runtime_s});
  }
  const ComparisonTable table = compare(std::move(rows));
  std::cout << format_table(table);
  if (!args.output.empty()) {
    std::ofstream os(args.output);
    if (!os) throw std::runtime_error("cannot open output: " + args.output);
    write_comparison_csv(os, table);
  }
  return 0;
}

}  // namespace detail

/// Entry point of the `ivm` tool; returns the process exit code.
inline int run_cli(int argc, const char* const* argv) {
  detail::CliArgs args;
  CLI::App app{"Sliding-window GNSS/odometry fusion with self-tuning mixture error models"};
  app.require_subcommand(1);

  auto* seed_opt = app.add_option("--seed", args.seed, "Override the scenario RNG seed");

  auto* sim = app.add_subcommand("simulate", "Generate a synthetic scenario stream");
  sim->add_option("spec", args.input, "Scenario spec file")->required();
  sim->add_option("-o,--output", args.output, "Output stream file")->required();

  auto* run = app.add_subcommand("run", "Run one pipeline over a stream");
  run->add_option("stream", args.input, "Measurement stream file")->required();
  run->add_option("--model", args.model, "Model selector")
      ->check(CLI::IsMember({"gaussian", "dcs", "cdce", "sm_em", "sm_vbi", "sm_em_cl", "ivm"}));
  run->add_option("--config", args.config_path, "Pipeline config file");
  run->add_option("-o,--output", args.output, "Output estimate CSV")->required();
  run->add_option("--mixture-log", args.mixture_log, "Per-epoch mixture trace file");

  auto* eval = app.add_subcommand("evaluate", "ATE of an estimate CSV against ground truth");
  eval->add_option("estimates", args.input, "Estimate CSV from `run`")->required();
  eval->add_option("truth", args.truth_path, "Stream file with gt records")->required();

  auto* sweep = app.add_subcommand("sweep", "Compare several models on one stream");
  sweep->add_option("stream", args.input, "Measurement stream file")->required();
  sweep->add_option("--models", args.models, "Comma-separated selector list");
  sweep->add_option("--config", args.config_path, "Pipeline config file");
  sweep->add_option("-o,--output", args.output, "Comparison CSV output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << '\n' << app.help();
    return 2;
  }
  args.seed_set = seed_opt->count() > 0;

  try {
    if (sim->parsed()) return detail::cmd_simulate(args);
    if (run->parsed()) return detail::cmd_run(args);
    if (eval->parsed()) return detail::cmd_evaluate(args);
    if (sweep->parsed()) return detail::cmd_sweep(args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace ivm

#endif  // IVM_CLI_HPP
