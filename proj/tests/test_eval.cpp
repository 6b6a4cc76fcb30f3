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

#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ivm/evaluate.hpp"

namespace {

namespace fs = std::filesystem;
using Catch::Matchers::ContainsSubstring;

std::vector<ivm::GtRecord> straight_truth(int n) {
  std::vector<ivm::GtRecord> truth;
  for (int i = 0; i < n; ++i) {
    ivm::GtRecord g;
    g.time = static_cast<double>(i);
    g.pose = {10.0 * i, 2.0 * i, 1.0, 0.3};
    truth.push_back(g);
  }
  return truth;
}

TEST_CASE("a constant 3-4 offset scores an ATE of five") {
  const auto truth = straight_truth(9);
  std::vector<ivm::EstimateRow> rows;
  for (const auto& g : truth) {
    ivm::EstimateRow r;
    r.time = g.time;
    r.x = g.pose.x + 3.0;
    r.y = g.pose.y - 4.0;
    r.z = g.pose.z + 100.0;   // vertical error is ignored by design
    r.phi = g.pose.phi + 1.0; // so is heading
    r.runtime_s = 0.25;
    rows.push_back(r);
  }
  const ivm::AteReport rep = ivm::ate(rows, truth);
  REQUIRE(rep.series.size() == 9);
  CHECK(rep.mean_ate == Catch::Approx(5.0).epsilon(1e-12));
  CHECK(rep.median_ate == Catch::Approx(5.0).epsilon(1e-12));
  CHECK(rep.total_runtime_s == Catch::Approx(9 * 0.25));
  for (double e : rep.series) CHECK(e == Catch::Approx(5.0));
}

TEST_CASE("ATE rejects estimates without matching ground truth") {
  const auto truth = straight_truth(3);
  std::vector<ivm::EstimateRow> rows(1);
  rows[0].time = 7.5;
  CHECK_THROWS_WITH(ivm::ate(rows, truth), ContainsSubstring("no ground truth"));
  // Empty input is a zero report, not an error.
  const ivm::AteReport rep = ivm::ate({}, truth);
  CHECK(rep.mean_ate == 0.0);
  CHECK(rep.series.empty());
}

TEST_CASE("median handles odd and even series lengths") {
  const auto truth = straight_truth(4);
  std::vector<ivm::EstimateRow> rows;
  const double offsets[] = {1.0, 9.0, 3.0, 5.0};
  for (int i = 0; i < 4; ++i) {
    ivm::EstimateRow r;
    r.time = truth[i].time;
    r.x = truth[i].pose.x + offsets[i];
    r.y = truth[i].pose.y;
    rows.push_back(r);
  }
  CHECK(ivm::ate(rows, truth).median_ate == Catch::Approx(4.0));  // (3+5)/2
  rows.pop_back();
  CHECK(ivm::ate(rows, truth).median_ate == Catch::Approx(3.0));
}

TEST_CASE("comparison table flags the lowest mean ATE") {
  const ivm::ComparisonTable table = ivm::compare({
      {"gaussian", 12.5, 1.0},
      {"ivm", 2.25, 3.5},
      {"dcs", 6.0, 1.2},
  });
  REQUIRE(table.best_index == 1);
  const std::string text = ivm::format_table(table);
  CHECK_THAT(text, ContainsSubstring("gaussian") && ContainsSubstring("ivm") &&
                       ContainsSubstring("*"));
  // The star marks only the winning row.
  std::istringstream lines(text);
  std::string line;
  int starred = 0;
  while (std::getline(lines, line)) {
    if (line.find('*') != std::string::npos) {
      ++starred;
      CHECK_THAT(line, ContainsSubstring("ivm"));
    }
  }
  CHECK(starred == 1);
}

TEST_CASE("comparison CSV round-trips") {
  const ivm::ComparisonTable table = ivm::compare({
      {"gaussian", 12.5, 1.0},
      {"ivm", 2.25, 3.5},
  });
  std::ostringstream os;
  ivm::write_comparison_csv(os, table);
  std::istringstream is(os.str());
  const ivm::ComparisonTable back = ivm::read_comparison_csv(is);
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[0].model == "gaussian");
  CHECK(back.rows[1].mean_ate_m == 2.25);
  CHECK(back.best_index == 1);
  std::istringstream bad("who,what\n");
  CHECK_THROWS_WITH(ivm::read_comparison_csv(bad), ContainsSubstring("header"));
}

// ---------------------------------------------------------------------------
// End-to-end runs of the command-line binary (path provided by the build).
// ---------------------------------------------------------------------------

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli_line(const std::string& args, const fs::path& dir) {
  const char* bin = std::getenv("IVM_CLI_PATH");  // env overrides the build path
#ifdef IVM_CLI_PATH
  if (bin == nullptr) bin = IVM_CLI_PATH;
#endif
  REQUIRE(bin != nullptr);
  const fs::path out = dir / "stdout.txt";
  const fs::path err = dir / "stderr.txt";
  const std::string cmd =
      std::string(bin) + " " + args + " > " + out.string() + " 2> " + err.string();
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  const auto slurp = [](const fs::path& p) {
    std::ifstream is(p);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

TEST_CASE("command line drives simulate, run, evaluate and sweep") {
  const fs::path dir = fs::temp_directory_path() / "ivm_cli_test";
  fs::remove_all(dir);
  fs::create_directories(dir);

  const fs::path spec = dir / "scenario.txt";
  {
    std::ofstream os(spec);
    os << "duration 12\nrate 1\nsatellites 6\nsigma_pr 2\nsigma_odo 0.05\n"
       << "segment 12 5 0.02\nnlos 4 12 0.3 1  1 30 8\n";
  }
  const fs::path stream = dir / "stream.txt";
  const fs::path est = dir / "est.csv";

  SECTION("happy path") {
    const auto sim = run_cli_line("simulate " + spec.string() + " -o " + stream.string(), dir);
    INFO(sim.err);
    REQUIRE(sim.exit_code == 0);
    CHECK_THAT(sim.out, ContainsSubstring("pseudoranges"));
    REQUIRE(fs::exists(stream));

    const auto run = run_cli_line(
        "run " + stream.string() + " --model ivm -o " + est.string(), dir);
    INFO(run.err);
    REQUIRE(run.exit_code == 0);
    CHECK_THAT(run.out, ContainsSubstring("model ivm"));

    std::ifstream est_is(est);
    const auto rows = ivm::read_results_csv(est_is);
    CHECK(rows.size() == 13);  // floor(12 * 1) + 1 epochs

    const auto eval =
        run_cli_line("evaluate " + est.string() + " " + stream.string(), dir);
    INFO(eval.err);
    REQUIRE(eval.exit_code == 0);
    CHECK_THAT(eval.out, ContainsSubstring("epochs 13") &&
                             ContainsSubstring("mean_ate_m") &&
                             ContainsSubstring("median_ate_m"));

    const fs::path cmp = dir / "cmp.csv";
    const auto sweep = run_cli_line("sweep " + stream.string() +
                                        " --models gaussian,ivm -o " + cmp.string(),
                                    dir);
    INFO(sweep.err);
    REQUIRE(sweep.exit_code == 0);
    CHECK_THAT(sweep.out, ContainsSubstring("model") && ContainsSubstring("gaussian") &&
                              ContainsSubstring("ivm") && ContainsSubstring("*"));
    std::ifstream cmp_is(cmp);
    const auto table = ivm::read_comparison_csv(cmp_is);
    REQUIRE(table.rows.size() == 2);
    CHECK(table.best_index >= 0);
  }

  SECTION("seed override changes the stream deterministically") {
    const fs::path s7a = dir / "s7a.txt", s7b = dir / "s7b.txt", s9 = dir / "s9.txt";
    REQUIRE(run_cli_line("--seed 7 simulate " + spec.string() + " -o " + s7a.string(), dir)
                .exit_code == 0);
    REQUIRE(run_cli_line("--seed 7 simulate " + spec.string() + " -o " + s7b.string(), dir)
                .exit_code == 0);
    REQUIRE(run_cli_line("--seed 9 simulate " + spec.string() + " -o " + s9.string(), dir)
                .exit_code == 0);
    const auto slurp = [](const fs::path& p) {
      std::ifstream is(p);
      std::ostringstream ss;
      ss << is.rdbuf();
      return ss.str();
    };
    CHECK(slurp(s7a) == slurp(s7b));
    CHECK(slurp(s7a) != slurp(s9));
  }

  SECTION("usage errors exit with code 2") {
    const auto sim = run_cli_line("simulate " + spec.string() + " -o " + stream.string(), dir);
    REQUIRE(sim.exit_code == 0);

    const auto bad_model = run_cli_line(
        "run " + stream.string() + " --model bogus -o " + est.string(), dir);
    CHECK(bad_model.exit_code == 2);
    CHECK_THAT(bad_model.err, ContainsSubstring("bogus"));

    const auto bad_flag = run_cli_line("run " + stream.string() + " --frobnicate", dir);
    CHECK(bad_flag.exit_code == 2);

    const auto no_cmd = run_cli_line("", dir);
    CHECK(no_cmd.exit_code == 2);

    const auto help = run_cli_line("--help", dir);
    CHECK(help.exit_code == 0);
    CHECK_THAT(help.out, ContainsSubstring("simulate") && ContainsSubstring("sweep"));
  }

  SECTION("runtime errors exit with code 1") {
    const auto missing = run_cli_line("run /no/such/stream.txt -o " + est.string(), dir);
    CHECK(missing.exit_code == 1);
    CHECK_THAT(missing.err, ContainsSubstring("error:"));
  }

  fs::remove_all(dir);
}

}  // namespace
