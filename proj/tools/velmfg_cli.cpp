// Copyright 2026 The velmfg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// velmfg <command> --scenario <file> [--out <dir>] [--seed <u64>] [--threads <n>]
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid input.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "velmfg/io.hpp"
#include "velmfg/parallel.hpp"
#include "velmfg/presets.hpp"
#include "velmfg/run.hpp"

namespace {

struct Args {
  std::string scenario;
  std::string out = "out";
  std::string trajectories;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
  double lane_eps = 0.1;
  double confinement = 0.0;
};

int Execute(const std::string& command, const Args& args) {
  using namespace velmfg;
  if (args.threads > 0) SetThreadCount(args.threads);
  Scenario sc;
  if (!args.scenario.empty()) {
    sc = LoadScenario(args.scenario);
  } else if (command == "lane-demo") {
    sc = LaneScenario(args.lane_eps, 120, args.confinement);
  } else {
    throw ValidationError("--scenario is required for " + command);
  }
  if (args.seed_set) {
    sc.seed = args.seed;
    sc.solver.seed = args.seed;
  }
  RunOptions opt;
  if (!args.trajectories.empty()) opt.trajectories = ReadFile(args.trajectories);
  const RunArtifacts art = RunCommand(sc, command, opt);
  WriteArtifacts(art, args.out);
  std::cout << art.report.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lagrangian mean-field game equilibria with velocity alignment"};
  app.require_subcommand(1);
  Args args;
  const std::string command_names[] = {"solve", "verify", "fields", "eulerian", "gradcheck", "lane-demo"};
  for (const std::string& name : command_names) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--scenario", args.scenario, "scenario JSON file");
    sub->add_option("--out", args.out, "artifact directory")->capture_default_str();
    sub->add_option("--seed", args.seed, "overrides the scenario seed")->each([&](const std::string&) {
      args.seed_set = true;
    });
    sub->add_option("--threads", args.threads, "worker threads (overrides VELMFG_THREADS)")->check(CLI::PositiveNumber);
    if (name == "verify" || name == "fields")
      sub->add_option("--trajectories", args.trajectories, "trajectories.csv from a previous solve");
    if (name == "lane-demo") {
      sub->add_option("--eps", args.lane_eps, "kernel length of the built-in preset (0.1 or 0.2)")
          ->capture_default_str();
      sub->add_option("--confinement", args.confinement, "transverse well stiffness of the built-in preset")
          ->capture_default_str();
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return Execute(command, args);
  } catch (const velmfg::ValidationError& e) {
    std::cerr << "velmfg: invalid input: " << e.what() << "\n";
    return 2;
  } catch (const velmfg::ParseError& e) {
    std::cerr << "velmfg: invalid input: " << e.what() << "\n";
    return 2;
  } catch (const velmfg::StageError& e) {
    std::cerr << "velmfg: " << (e.invalid_input() ? "invalid input: " : command + " failed: ") << e.what() << "\n";
    return e.invalid_input() ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "velmfg: " << command << " failed: " << e.what() << "\n";
    return 1;
  }
}
