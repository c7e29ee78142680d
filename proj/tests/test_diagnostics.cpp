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
#include <vector>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "velmfg/diagnostics.hpp"
#include "velmfg/presets.hpp"

namespace velmfg {
namespace {

using testing::SimpleModel;

SolveConfig Tight() {
  SolveConfig c;
  c.gradient_tolerance = 1e-12;
  return c;
}

Ensemble SingleAgentLine(Point g, Point x0, double delta, int steps, bool optimal) {
  const int d = static_cast<int>(g.size());
  const Model m = SimpleModel(Domain::Euclidean(d), Kernel::SmoothedExponential(1, 0.5, 0.05), 1.0, 1.0, steps,
                              {PopulationModel{1.0, delta, TerminalCost::Linear(g)}});
  std::vector<double> nodes;
  for (int k = 0; k <= steps; ++k)
    for (int c = 0; c < d; ++c) nodes.push_back(x0[c] - (optimal ? 1.0 : 0.3) * k * m.dt() * g[c] / delta);
  return Ensemble(m, {0}, {1.0}, nodes);
}

std::pair<Ensemble, SolveReport> SolvedHeadOn(int per = 8, int steps = 16, double horizon = 1.0) {
  const Scenario sc = HeadOnScenario(per, steps, horizon);
  return testing::MonotoneSolve(InitializeEnsemble(sc, sc.seed), sc.solver);
}

TEST(BestResponse, SingleAgentStraightLine) {
  // The deviator still sees its incumbent (self-term), so the closed form is
  // the answer when the incumbent is the optimum; starts ignore it.
  const Point g = {1.0, 0.5};
  const Ensemble e = SingleAgentLine(g, {0.0, 0.0}, 2.0, 12, true);
  BestResponseOptions opt;
  opt.starts = 4;
  opt.perturbation = 0.2;
  opt.random_only = true;
  const BestResponseResult br = BestResponse(0, e, Tight(), opt);
  for (int k = 0; k <= 12; ++k)
    for (int c = 0; c < 2; ++c) EXPECT_NEAR(br.nodes[k * 2 + c], -k * e.dt() * g[c] / 2.0, 1e-8);
  EXPECT_NEAR(br.cost, br.incumbent_cost, 1e-12);
}

TEST(BestResponse, NeverWorseThanIncumbent) {
  const Ensemble e = SingleAgentLine({1.0, 0.5}, {0.0, 0.0}, 2.0, 12, false);
  const BestResponseResult br = BestResponse(0, e, Tight());
  EXPECT_LT(br.cost, br.incumbent_cost);
  EXPECT_GT(br.self_share, 0.0);
}

TEST(BestResponse, OptimalParticleCannotImprove) {
  const auto [e, rep] = SolvedHeadOn();
  ASSERT_TRUE(rep.converged());
  for (int i : {0, 5, 11}) {
    const BestResponseResult br = BestResponse(i, e, Tight());
    EXPECT_NEAR(br.cost, AgentCost(i, e), 1e-6);
  }
}

TEST(Exploitability, StillCurvesAreOptimalWithoutTerminal) {
  Scenario sc = HeadOnScenario(4, 8);
  for (auto& p : sc.populations) p.terminal = TerminalCost();
  sc.solver.perturbation = 0.0;
  const ExploitabilityReport ex = Exploitability(InitializeEnsemble(sc, 1), Tight(), {});
  for (double gap : ex.gap) EXPECT_LE(std::abs(gap), 1e-12);
}

TEST(Exploitability, BentCurveIsExploitable) {
  auto [e, rep] = SolvedHeadOn();
  const int i = 3;
  const std::vector<double> original(e.curve_nodes(i).begin(), e.curve_nodes(i).end());
  for (int k = 1; k < e.steps(); ++k) {
    Point x(e.node(i, k), e.node(i, k) + 2);
    x[1] += 0.3 * std::sin(3.14159 * k / e.steps());
    e.SetNode(i, k, x);
  }
  const double bent = AgentCost(i, e);
  // Reverting is one admissible deviation, so the gap is at least this.
  const double revert = DeviatorCost(e, e.population(i), original);
  const ExploitabilityReport ex = Exploitability(e, Tight(), {});
  EXPECT_GT(bent - revert, 0.01);
  EXPECT_GE(ex.gap[i], bent - revert - 1e-8);
  for (double gap : ex.gap) EXPECT_GE(gap, -1e-10);
}

TEST(ExploitabilityProperty, GapsShrinkWithTolerance) {
  double previous = kInf;
  BestResponseOptions opt;
  for (double tol : {1e-4, 1e-6, 1e-8}) {
    Scenario sc = HeadOnScenario(8, 16);
    sc.solver.gradient_tolerance = tol;
    const auto [e, rep] = testing::MonotoneSolve(InitializeEnsemble(sc, sc.seed), sc.solver);
    const ExploitabilityReport ex = Exploitability(e, Tight(), opt);
    EXPECT_LT(ex.weighted_gap, previous);
    previous = ex.weighted_gap;
  }
}

TEST(ElResidual, SingleAgentOptimumIsExact) {
  const Ensemble e = SingleAgentLine({0.4, -0.9}, {1.0, 2.0}, 1.7, 10, true);
  const ElReport el = ElResiduals(e);
  EXPECT_LE(el.max_residual, 1e-8);
  EXPECT_LE(el.max_transversality, 1e-8);
}

TEST(ElResidual, NonOptimalEnsembleViolatesTransversality) {
  Scenario sc = HeadOnScenario(8, 16);
  sc.solver.perturbation = 0.0;
  Ensemble e = InitializeEnsemble(sc, 2);
  e = StillEnsemble(e);
  EXPECT_GT(ElResiduals(e).max_transversality, 0.1);
}

TEST(ElResidual, ShrinksAtFirstOrderUnderRefinement) {
  double previous = kInf;
  for (int m : {16, 32, 64}) {
    const double r = ElResiduals(SolvedHeadOn(8, m).first).max_residual;
    if (std::isfinite(previous)) {
      EXPECT_LE(r, previous * std::pow(2.0, -0.9));
    }
    previous = r;
  }
}

TEST(BoundsAudit, SingleAtomMassBound) {
  const Model m = SimpleModel(Domain::Euclidean(1), Kernel::SmoothedExponential(2.0, 0.3, 0.03), 1.0, 1.0, 4,
                              {PopulationModel{0.6, 1.0, TerminalCost::Linear({1.0})}});
  const Ensemble e(m, {0}, {0.6}, {0, -0.2, -0.4, -0.6, -0.8});
  const AuditReport a = BoundsAudit(e, 500, 3);
  EXPECT_TRUE(a.check("a <= A W").holds);
  EXPECT_LE(a.check("a <= A W").worst_ratio, 1.0);
  EXPECT_EQ(a.kernel_constant, 1.0 / 0.3);
}

TEST(BoundsAudit, ConstantKernelMeanVelocity) {
  const Model m = SimpleModel(Domain::Euclidean(1), Kernel::Constant(2.0), 1.0, 1.0, 1,
                              {PopulationModel{1.0, 1.0, TerminalCost()}});
  const Ensemble e(m, {0, 0}, {0.5, 0.5}, {0, 1, 0, -3});
  const MacroSample f = MacroEval(e, 0, Point{0.3});
  EXPECT_NEAR(std::abs(f.au[0]), 2.0 * 1.0, 1e-15);  // A W |mean v| with mean -1
  EXPECT_LE(std::abs(f.au[0]), 2.0 * Moments(e).m1[0]);
  EXPECT_TRUE(BoundsAudit(e, 200, 1).all_hold());
}

TEST(BoundsAudit, HoldsAtConvergedEquilibrium) {
  const auto [e, rep] = SolvedHeadOn();
  const AuditReport a = BoundsAudit(e, 1000, 7);
  for (const AuditCheck& c : a.checks) EXPECT_TRUE(c.holds) << c.name << " ratio " << c.worst_ratio;
  EXPECT_EQ(a.checks.size(), 11u);
}

TEST(BoundsAudit, GaussianOnEuclideanSkipsKernelConstantChecks) {
  const Model m = SimpleModel(Domain::Euclidean(1), Kernel::Gaussian(1.0, 0.5), 1.0, 1.0, 2,
                              {PopulationModel{1.0, 1.0, TerminalCost()}});
  const Ensemble e(m, {0, 0}, {0.5, 0.5}, {0, 1, 2, 0, -1, -2});
  const AuditReport a = BoundsAudit(e, 100, 1);
  EXPECT_TRUE(std::isinf(a.kernel_constant));
  EXPECT_EQ(a.check("|grad a| <= C a").worst_ratio, 0.0);
}

TEST(BoundsAuditProperty, HoldsOnRandomEnsembles) {
  testing::Gen g(51);
  for (int t = 0; t < 10; ++t) {
    const Model m = g.AnyModel(Domain::Torus({2.0, 2.0}), 6, 2);
    const AuditReport a = BoundsAudit(g.AnyEnsemble(m, 12, 0.2), 300, t);
    // The speed bound needs optimality; the field inequalities do not.
    for (std::size_t c = 0; c + 1 < a.checks.size(); ++c) EXPECT_TRUE(a.checks[c].holds) << a.checks[c].name;
  }
}

TEST(Monokineticity, IdenticalCurvesGiveZero) {
  const Model m = SimpleModel(Domain::Euclidean(1), Kernel::Constant(1), 1.0, 1.0, 3,
                              {PopulationModel{1.0, 1.0, TerminalCost()}});
  const Ensemble e(m, {0, 0}, {0.5, 0.5}, {0, 1, 3, 2, 0, 1, 3, 2});
  EXPECT_EQ(MonokineticityIndex(e, 1.0), 0.0);
}

TEST(Monokineticity, CrossingLines) {
  // x1 = t, x2 = 1 - t / 2 on [0, 2] with M = 6; they meet at t = 2/3 (node 2).
  const Model m = SimpleModel(Domain::Euclidean(1), Kernel::Constant(1), 1.0, 2.0, 6,
                              {PopulationModel{1.0, 1.0, TerminalCost()}});
  std::vector<double> nodes;
  for (int k = 0; k <= 6; ++k) nodes.push_back(k / 3.0);
  for (int k = 0; k <= 6; ++k) nodes.push_back(1.0 - k / 6.0);
  const Ensemble e(m, {0, 0}, {0.5, 0.5}, nodes);
  EXPECT_DOUBLE_EQ(MonokineticityIndex(e, 0.1), 1.5);
  EXPECT_EQ(MonokineticityIndex(e, 1e-3, true), 1.5);
}

TEST(Uniqueness, SingleAgentIsStrictlyConvex) {
  const Ensemble e = SingleAgentLine({1.0, -0.4}, {0.0, 0.0}, 1.0, 10, false);
  EXPECT_LE(UniquenessProbe(e, 0, 6, Tight(), 0.2, 5).dispersion, 1e-8);
}

TEST(Uniqueness, ShortHorizonHasOneBestResponse) {
  const auto [e, rep] = SolvedHeadOn(8, 16, 0.1);
  EXPECT_LE(UniquenessProbe(e, 2, 10, Tight(), 0.05, 1).dispersion, 1e-6);
}

}  // namespace
}  // namespace velmfg
