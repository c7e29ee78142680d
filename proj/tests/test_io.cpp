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


#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "velmfg/io.hpp"
#include "velmfg/presets.hpp"
#include "velmfg/run.hpp"

namespace velmfg {
namespace {

std::string Sample(const std::string& name) { return ReadFile(std::string(VELMFG_SAMPLES_DIR) + "/" + name); }

template <class F>
std::string ErrorOf(F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

TEST(LoadScenario, MinimalFileFillsDefaults) {
  const Scenario sc = ParseScenario(Sample("minimal.json"));
  ASSERT_EQ(sc.populations.size(), 1u);
  EXPECT_EQ(sc.kernel, Kernel::SmoothedExponential(1.0, 1.0, 0.1));
  EXPECT_EQ(sc.solver.gradient_tolerance, 1e-8);
  EXPECT_EQ(sc.solver.max_iterations, 10000);
  EXPECT_EQ(sc.eulerian.damping, 0.5);
  const Json echoed = Json::parse(WriteScenario(sc));
  EXPECT_EQ(echoed["solver"]["armijo_c1"], 1e-4);
  EXPECT_EQ(echoed["kernel"]["smoothing"], 0.1);
  EXPECT_EQ(echoed["populations"][0]["sampler"]["kind"], "uniform-box");
}

TEST(LoadScenario, NegativeLambdaNamesInvariant) {
  const std::string text = R"({"lambda": -1, "populations": [{"count": 2}]})";
  EXPECT_THROW(ParseScenario(text), ValidationError);
  EXPECT_NE(ErrorOf([&] { ParseScenario(text); }).find("lambda"), std::string::npos);
}

TEST(LoadScenario, LanePresetFile) {
  const Scenario sc = ParseScenario(Sample("lanes.json"));
  ASSERT_EQ(sc.populations.size(), 2u);
  for (int q = 0; q < 2; ++q) {
    const auto& lin = sc.populations[q].terminal.linear();
    ASSERT_EQ(lin.size(), 1u);
    EXPECT_EQ(lin[0].gradient, (Point{q == 0 ? 1.0 : -1.0, 0.0}));
  }
  EXPECT_EQ(sc, LaneScenario(0.1));
}

TEST(LoadScenario, ParseErrorNamesLine) {
  const std::string msg = ErrorOf([] { ParseScenario("{\n  \"lambda\": 1,\n  \"steps\": ,\n}"); });
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
}

TEST(LoadScenario, FieldErrorsNamePath) {
  const std::string msg = ErrorOf([] { ParseScenario(R"({"populations": [{"count": 2, "colour": 1}]})"); });
  EXPECT_NE(msg.find("populations[0].colour"), std::string::npos) << msg;
  const std::string typed = ErrorOf([] { ParseScenario(R"({"steps": "many", "populations": [{}]})"); });
  EXPECT_NE(typed.find("steps"), std::string::npos) << typed;
}

TEST(LoadScenario, LinearCostOnTorusRejected) {
  const std::string text = R"({"domain": {"kind": "torus", "periods": [1]},
    "populations": [{"terminal": {"linear": [[1]]}}]})";
  EXPECT_THROW(ParseScenario(text), ValidationError);
}

TEST(LoadScenario, SamplerOutsideTorusPeriodRejected) {
  const std::string text = R"({"domain": {"kind": "torus", "periods": [1]},
    "populations": [{"sampler": {"kind": "uniform-box", "lo": [0], "hi": [2]}}]})";
  EXPECT_THROW(ParseScenario(text), ValidationError);
}

Scenario RandomScenario(testing::Gen& g) {
  Scenario sc;
  sc.name = "random-" + std::to_string(g.Int(0, 1000));
  const int d = g.Int(1, 3);
  const bool torus = g.Int(0, 1) == 1;
  sc.domain = torus ? Domain::Torus(g.Vec(d, 1.0, 3.0)) : Domain::Euclidean(d);
  sc.kernel = g.AnyKernel();
  sc.lambda = g.Uniform(0.1, 5);
  sc.horizon = g.Uniform(0.1, 2);
  sc.steps = g.Int(1, 40);
  sc.seed = static_cast<std::uint64_t>(g.Int(0, 1 << 30)) * 7919u;
  sc.solver.memory = g.Int(0, 10);
  sc.solver.perturbation = g.Uniform(0, 0.1);
  sc.solver.seed = sc.seed;
  sc.diagnostics.audit_samples = g.Int(10, 2000);
  sc.diagnostics.monokinetic_radius = g.Uniform(0, 1);
  sc.eulerian.cells = g.Int(8, 512);
  const int pops = g.Int(1, 3);
  for (int q = 0; q < pops; ++q) {
    PopulationSpec p;
    p.name = "p" + std::to_string(q);
    p.mass = g.Uniform(0.1, 2);
    p.delta = g.Uniform(0.1, 2);
    p.count = g.Int(1, 20);
    p.terminal = g.AnyTerminal(d, !torus);
    const int kind = g.Int(0, 2);
    if (kind == 0) {
      p.sampler.kind = SamplerKind::kUniformBox;
      p.sampler.lo = g.Vec(d, 0.0, 0.4);
      p.sampler.hi = g.Vec(d, 0.5, 0.9);
    } else if (kind == 1) {
      p.sampler.kind = SamplerKind::kGaussian;
      p.sampler.mean = g.Vec(d, 0.2, 0.8);
      p.sampler.stddev = g.Vec(d, 0.01, 0.1);
      p.sampler.stratified = g.Int(0, 1) == 1;
    } else {
      p.sampler.kind = SamplerKind::kPoints;
      for (int r = 0; r < p.count; ++r) p.sampler.points.push_back(g.Vec(d, 0.1, 0.9));
    }
    sc.populations.push_back(p);
  }
  return sc;
}

TEST(ScenarioProperty, RoundTrip) {
  testing::Gen g(71);
  for (int t = 0; t < 200; ++t) {
    const Scenario sc = RandomScenario(g);
    const Scenario back = ParseScenario(WriteScenario(sc));
    EXPECT_EQ(back, sc) << WriteScenario(sc);
    EXPECT_EQ(ScenarioHash(back), ScenarioHash(sc));
  }
}

TEST(ScenarioProperty, PresetsRoundTrip) {
  for (const Scenario& sc : {HeadOnScenario(), MirrorScenario(), TorusScenario(), LaneScenario(0.2, 50, 1.0)})
    EXPECT_EQ(ParseScenario(WriteScenario(sc)), sc);
}

TEST(Tables, TrajectoryRoundTripAndHashCheck) {
  const Scenario sc = HeadOnScenario(3, 4);
  const Ensemble e = InitializeEnsemble(sc, sc.seed);
  const std::string text = TrajectoryTable(e, ScenarioHash(sc));
  EXPECT_EQ(text.rfind("# scenario_hash=" + ScenarioHash(sc), 0), 0u);
  const Ensemble back = LoadTrajectories(sc, text);
  EXPECT_TRUE(std::equal(back.nodes().begin(), back.nodes().end(), e.nodes().begin()));
  Scenario other = sc;
  other.lambda = 2.0;
  EXPECT_THROW(LoadTrajectories(other, text), Error);
}

TEST(Run, GradcheckOnRandomScenario) {
  testing::Gen g(72);
  Scenario sc;
  sc.domain = Domain::Euclidean(2);
  sc.kernel = Kernel::Gaussian(1.0, 0.8);
  sc.steps = 8;
  for (int q = 0; q < 2; ++q) {
    PopulationSpec p;
    p.name = q == 0 ? "a" : "b";
    p.mass = 0.5;
    p.count = 3;
    p.terminal = g.AnyTerminal(2, true);
    p.sampler.lo = {-1, -1};
    p.sampler.hi = {1, 1};
    sc.populations.push_back(p);
  }
  const RunArtifacts art = RunCommand(sc, "gradcheck");
  EXPECT_LE(art.report["gradcheck"]["max_relative_error"].get<double>(), 1e-6);
}

TEST(Run, SolveIsDeterministic) {
  const Scenario sc = HeadOnScenario(4, 8);
  const RunArtifacts a = RunCommand(sc, "solve"), b = RunCommand(sc, "solve");
  ASSERT_EQ(a.files.size(), b.files.size());
  for (std::size_t f = 0; f < a.files.size(); ++f) EXPECT_EQ(a.files[f], b.files[f]) << a.files[f].first;
}

TEST(Run, VerifyRefusesMismatchedTrajectories) {
  const Scenario sc = HeadOnScenario(4, 8);
  const RunArtifacts solved = RunCommand(sc, "solve");
  RunOptions opt;
  opt.trajectories = solved.file("trajectories.csv");
  const RunArtifacts ok = RunCommand(sc, "verify", opt);
  EXPECT_TRUE(ok.report.contains("exploitability"));
  Scenario other = sc;
  other.seed = 99;
  const std::string msg = ErrorOf([&] { RunCommand(other, "verify", opt); });
  EXPECT_NE(msg.find("[load-trajectories]"), std::string::npos) << msg;
}

TEST(Run, UnknownCommandRejected) { EXPECT_THROW(RunCommand(HeadOnScenario(2, 4), "plot"), ValidationError); }

TEST(Run, StageIsAttachedToErrors) {
  const std::string msg = ErrorOf([] { RunCommand(HeadOnScenario(2, 4), "eulerian"); });
  EXPECT_NE(msg.find("[eulerian-setup]"), std::string::npos) << msg;
  try {
    RunCommand(HeadOnScenario(2, 4), "eulerian");
  } catch (const StageError& e) {
    EXPECT_TRUE(e.invalid_input());
  }
}

TEST(Run, LaneDemoExportsSegregationSeries) {
  const Scenario sc = LaneScenario(0.1, 20);
  const RunArtifacts art = RunCommand(sc, "lane-demo");
  const ParsedTable t = ParseTable(art.file("segregation.csv"));
  ASSERT_EQ(t.rows.size(), static_cast<std::size_t>(sc.steps + 1));
  EXPECT_EQ(t.rows.front()[0], 0.0);
  EXPECT_DOUBLE_EQ(t.rows.back()[0], sc.horizon);
  EXPECT_TRUE(art.report["segregation"].contains("initial"));
  EXPECT_TRUE(art.report["segregation"].contains("final"));
}

Ensemble Frozen(const std::vector<std::pair<int, Point>>& particles, int pops) {
  std::vector<PopulationModel> pm(pops, PopulationModel{0.0, 1.0, TerminalCost()});
  std::vector<int> labels;
  std::vector<double> w, nodes;
  for (const auto& [q, x] : particles) {
    labels.push_back(q);
    w.push_back(1.0);
    pm[q].mass += 1.0;
    for (int k = 0; k <= 1; ++k) nodes.insert(nodes.end(), x.begin(), x.end());
  }
  return Ensemble(testing::SimpleModel(Domain::Euclidean(2), Kernel::Constant(1), 1, 1, 1, pm), labels, w, nodes);
}

TEST(Segregation, SeparatedPopulationsArePure) {
  const Ensemble e = Frozen({{0, {0, 0}}, {0, {0.1, 0}}, {1, {5, 0}}, {1, {5.1, 0}}}, 2);
  EXPECT_EQ(SegregationIndex(e, 0, 0.5), 1.0);
}

TEST(Segregation, SquareWithAlternatingCornersIsNeutral) {
  // Each particle has one same and one other neighbour at distance 1.
  const Ensemble e = Frozen({{0, {0, 0}}, {0, {1, 0}}, {1, {1, 1}}, {1, {0, 1}}}, 2);
  EXPECT_EQ(SegregationIndex(e, 1, 1.0), 0.0);
}

TEST(Segregation, IsolatedParticlesContributeNothing) {
  const Ensemble e = Frozen({{0, {0, 0}}, {0, {10, 0}}, {1, {20, 0}}, {1, {20.1, 0}}}, 2);
  EXPECT_EQ(SegregationIndex(e, 0, 0.5), 0.5);
  const Ensemble single = Frozen({{0, {0, 0}}, {0, {1, 0}}}, 1);
  EXPECT_THROW(SegregationIndex(single, 0, 1.0), ValidationError);
}

}  // namespace
}  // namespace velmfg
