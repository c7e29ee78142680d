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


// Acceptance gate: every criterion prints one PASS/FAIL line. The exit code
// is nonzero when a criterion outside kKnownFailures fails, or when a known
// failure starts passing (so the list cannot go stale).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "test_support.hpp"
#include "velmfg/diagnostics.hpp"
#include "velmfg/io.hpp"
#include "velmfg/macro.hpp"
#include "velmfg/presets.hpp"
#include "velmfg/run.hpp"
#include "velmfg/solver.hpp"

namespace velmfg {
namespace {

// Finite-radius monokineticity converges to a positive limit under M-doubling
// (see README, "Known failures").
const std::set<int> kKnownFailures = {8};

struct Outcome {
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

std::string Fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// Energy histories of every solve run by this binary, for the monotonicity criterion.
std::vector<std::pair<std::string, std::vector<double>>> g_histories;

void Record(const std::string& what, const SolveReport& rep) { g_histories.emplace_back(what, rep.energy_history); }

void Record(const std::string& what, const RunArtifacts& art) {
  if (!art.has("energy.csv")) return;
  std::vector<double> h;
  for (const auto& row : ParseTable(art.file("energy.csv")).rows) h.push_back(row[1]);
  g_histories.emplace_back(what, h);
}

RunArtifacts Run(const std::string& what, const Scenario& sc, const std::string& command, const RunOptions& opt = {}) {
  RunArtifacts art = RunCommand(sc, command, opt);
  Record(what, art);
  return art;
}

bool SameFiles(const RunArtifacts& a, const RunArtifacts& b) { return a.files == b.files; }

SolveConfig ConfigOf(const Scenario& sc) {
  SolveConfig cfg = sc.solver;
  cfg.seed = sc.seed;
  return cfg;
}

// Shared state: the head-on runs feed criteria 3, 6, 8 and 12.
struct HeadOn {
  Scenario sc = HeadOnScenario();
  RunArtifacts solve[2], verify[2];
  std::optional<Ensemble> refined;  // converged at M = 64
};

Outcome GradientCriterion() {
  testing::Gen g(2026);
  double worst = 0.0;
  std::set<int> families;
  for (int s = 0; s < 5; ++s) {
    Model m = g.AnyModel(Domain::Euclidean(2), 16, 2);
    const Kernel kernels[] = {Kernel::SmoothedExponential(1.0, 0.7, 0.1), Kernel::Gaussian(1.0, 0.8),
                              Kernel::Constant(0.5)};
    m.kernel = kernels[s % 3];
    families.insert(static_cast<int>(m.kernel.family));
    const Ensemble e = g.AnyEnsemble(m, 8, 0.2);
    worst = std::max(worst, detail::CheckGradient(e, 1e-5).max_relative_error);
  }
  return {worst <= 1e-6, Fmt("max relative error %.3g over 5 scenarios (%g kernel families)", worst,
                             static_cast<double>(families.size()))};
}

Scenario SingleAgentScenario() {
  Scenario sc;
  sc.name = "single-agent";
  sc.domain = Domain::Euclidean(2);
  sc.steps = 16;
  sc.horizon = 1.5;
  PopulationSpec p;
  p.name = "solo";
  p.delta = 2.0;
  p.terminal = TerminalCost::Linear({0.7, -0.3});
  p.sampler.kind = SamplerKind::kPoints;
  p.sampler.points = {{0.2, 0.1}};
  sc.populations = {p};
  return sc;
}

Outcome SingleAgentCriterion(RunArtifacts (&runs)[2]) {
  const Scenario sc = SingleAgentScenario();
  for (auto& r : runs) r = Run("single-agent", sc, "solve");
  const Ensemble& e = *runs[0].ensemble;
  const Point g = {0.7, -0.3}, x0 = {0.2, 0.1};
  const double delta = 2.0, T = sc.horizon;
  double node_err = 0.0;
  for (int k = 0; k <= e.steps(); ++k)
    for (int c = 0; c < 2; ++c)
      node_err = std::max(node_err, std::abs(e.node(0, k)[c] - (x0[c] - g[c] / delta * k * e.dt())));
  const double want = -T * (g[0] * g[0] + g[1] * g[1]) / (2.0 * delta) + g[0] * x0[0] + g[1] * x0[1];
  const double got = AgentCost(0, e);
  const double rel = std::abs(got - want) / std::abs(want);
  return {node_err <= 1e-8 && rel <= 1e-10, Fmt("node error %.3g, cost %.15g vs %.15g (rel %.3g)", node_err, got, want, rel)};
}

Outcome EquilibriumCriterion(HeadOn& h) {
  for (int r = 0; r < 2; ++r) {
    h.solve[r] = Run("head-on M=32", h.sc, "solve");
    RunOptions opt;
    opt.trajectories = h.solve[r].file("trajectories.csv");
    h.verify[r] = Run("head-on verify", h.sc, "verify", opt);
  }
  const Json& ex = h.verify[0].report["exploitability"];
  const double worst = ex["max_relative_gap"].get<double>();
  return {worst <= 1e-3, Fmt("N=%g M=%g: max eps/(1+|F|) = %.3g, weighted gap %.3g", h.sc.particle_count(), h.sc.steps,
                             worst, ex["weighted_gap"].get<double>())};
}

Outcome DecompositionCriterion(const HeadOn& h) {
  testing::Gen g(505);
  const Scenario mirror = MirrorScenario(), torus = TorusScenario(64);
  const std::vector<Ensemble> ens = {*h.solve[0].ensemble, InitializeEnsemble(mirror, mirror.seed),
                                     InitializeEnsemble(torus, torus.seed)};
  double worst = 0.0;
  for (const Ensemble& e : ens) {
    const int d = e.dim();
    for (int s = 0; s < 100; ++s) {
      const int k = g.Int(0, e.steps() - 1);
      const auto near = e.node(g.Int(0, e.size() - 1), k);
      Point x(near, near + d);
      for (int c = 0; c < d; ++c) x[c] += g.Uniform(-0.3, 0.3);
      const Point v = g.Vec(d, -3.0, 3.0);
      const Decomposition dc = DecompositionCheck(e, k, x, v);
      worst = std::max(worst, std::abs(dc.lhs - dc.rhs) / (1e-10 * (1.0 + std::abs(dc.lhs))));
    }
  }
  return {worst <= 1.0, Fmt("worst |direct - (a|v-u|^2+sigma)| / (1e-10 (1+scale)) = %.3g over 3 x 100 samples", worst)};
}

Outcome AuditCriterion(HeadOn& h) {
  const Ensemble& e32 = *h.solve[0].ensemble;
  SolveConfig cfg = ConfigOf(h.sc);
  auto [e64, rep] = MinimizeEnergy(RefineTime(e32), cfg);
  Record("head-on M=64", rep);
  h.refined = e64;
  std::string failed;
  int checks = 0;
  for (const Ensemble* e : {&e32, static_cast<const Ensemble*>(&*h.refined)}) {
    const AuditReport a = BoundsAudit(*e, 1000, h.sc.seed);
    for (const auto& c : a.checks) {
      ++checks;
      if (!c.holds) failed += " " + c.name;
    }
  }
  const double c32 = ElResiduals(e32).max_transversality / e32.dt();
  const double c64 = ElResiduals(*h.refined).max_transversality / h.refined->dt();
  const bool stable = std::abs(c64 / c32 - 1.0) <= 0.5;
  return {failed.empty() && stable,
          Fmt("%g audit checks at 1000 samples on M=32,64; transversality C = %.4g (M=32), %.4g (M=64)",
              static_cast<double>(checks), c32, c64) +
              (failed.empty() ? "" : "; violated:" + failed)};
}

Outcome UniquenessCriterion() {
  const Scenario sc = HeadOnScenario(16, 32, 0.1);
  auto [e, rep] = MinimizeEnergy(InitializeEnsemble(sc, sc.seed), ConfigOf(sc), MirrorMap(sc));
  Record("head-on T=0.1", rep);
  double worst = 0.0;
  for (int i : {0, e.size() - 1}) {
    const UniquenessReport u = UniquenessProbe(e, i, 10, ConfigOf(sc), sc.diagnostics.best_response_perturbation,
                                               sc.seed + i);
    worst = std::max(worst, u.dispersion);
  }
  return {worst <= 1e-6, Fmt("T=0.1, 10 best-response starts: max pairwise sup distance %.3g", worst)};
}

Outcome MonokineticCriterion(const HeadOn& h) {
  const double r = h.sc.monokinetic_radius();
  const Ensemble init = InitializeEnsemble(h.sc, h.sc.seed);
  const double i0 = MonokineticityIndex(init, r, true);
  const double i32 = MonokineticityIndex(*h.solve[0].ensemble, r, true);
  const double i64 = MonokineticityIndex(*h.refined, r, true);
  return {i32 <= i0 && i64 <= i32,
          Fmt("radius %.3g: init %.5g, M=32 %.5g, M=64 %.5g", r, i0, i32, i64)};
}

Outcome SymmetryCriterion() {
  const Scenario sc = MirrorScenario();
  const RunArtifacts art = Run("mirror-1d", sc, "solve");
  const Ensemble& e = *art.ensemble;
  const std::vector<int> map = MirrorMap(sc);
  double worst = 0.0;
  for (int i = 0; i < e.size(); ++i) {
    if (map[i] < 0) continue;
    for (int k = 0; k <= e.steps(); ++k) worst = std::max(worst, std::abs(e.node(i, k)[0] + e.node(map[i], k)[0]));
  }
  return {worst <= 1e-6, Fmt("max |x_i + x_mirror(i)| over nodes = %.3g", worst)};
}

Outcome EulerianCriterion() {
  const Scenario sc = TorusScenario(2000);
  const RunArtifacts art = Run("torus-1d", sc, "eulerian");
  const Json& p = art.report["picard"];
  const double res = p["final_residual"].get<double>(), mass = p["mass_error"].get<double>();
  const int its = p["iterations"].get<int>();
  const double l1 = art.report["cross_validation"]["l1_final"].get<double>();
  const bool ok = p["converged"].get<bool>() && res <= 1e-6 && its <= 500 && mass <= 1e-12 && l1 <= 0.1;
  return {ok, Fmt("Picard %g iterations, residual %.3g, mass error %.3g, final L1 %.4g", its, res, mass, l1)};
}

Outcome LaneCriterion(RunArtifacts (&runs)[2]) {
  const Scenario sc = LaneScenario(0.1);
  for (auto& r : runs) r = Run("lanes", sc, "lane-demo");
  const Json& s = runs[0].report["segregation"];
  const double a = s["initial"].get<double>(), b = s["final"].get<double>();
  const bool exported = runs[0].has("segregation.csv") &&
                        ParseTable(runs[0].file("segregation.csv")).rows.size() == static_cast<std::size_t>(sc.steps + 1);
  return {b > a && exported, Fmt("segregation t=0 %.4g, t=T %.4g (series of %g exported)", a, b, sc.steps + 1.0)};
}

Outcome DeterminismCriterion(const RunArtifacts (&single)[2], const HeadOn& h, const RunArtifacts (&lanes)[2]) {
  const bool s = SameFiles(single[0], single[1]);
  const bool e = SameFiles(h.solve[0], h.solve[1]) && SameFiles(h.verify[0], h.verify[1]);
  const bool l = SameFiles(lanes[0], lanes[1]);
  return {s && e && l, std::string("bit-identical artifacts: single-agent ") + (s ? "yes" : "no") + ", head-on " +
                           (e ? "yes" : "no") + ", lanes " + (l ? "yes" : "no")};
}

Outcome MonotonicityCriterion() {
  int violations = 0;
  std::string first;
  for (const auto& [what, h] : g_histories)
    for (std::size_t s = 1; s < h.size(); ++s)
      if (!(h[s] <= h[s - 1])) {
        if (violations++ == 0) first = what;
      }
  return {violations == 0 && !g_histories.empty(),
          Fmt("%g solves checked, %g increases", static_cast<double>(g_histories.size()), violations) +
              (first.empty() ? "" : " (first in " + first + ")")};
}

int Main() {
  std::map<int, Outcome> out;
  auto timed = [&](int id, const std::function<Outcome()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& ex) {
      o = {false, std::string("threw: ") + ex.what()};
    }
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "criterion %d done in %.1f s\n", id, o.seconds);
    out[id] = o;
  };
  HeadOn h;
  RunArtifacts single[2], lanes[2];
  timed(1, GradientCriterion);
  timed(2, [&] { return SingleAgentCriterion(single); });
  timed(3, [&] { return EquilibriumCriterion(h); });
  timed(5, [&] { return DecompositionCriterion(h); });
  timed(6, [&] { return AuditCriterion(h); });
  timed(7, UniquenessCriterion);
  timed(8, [&] { return MonokineticCriterion(h); });
  timed(9, SymmetryCriterion);
  timed(10, EulerianCriterion);
  timed(11, [&] { return LaneCriterion(lanes); });
  timed(12, [&] { return DeterminismCriterion(single, h, lanes); });
  timed(4, MonotonicityCriterion);

  int unexpected = 0;
  for (const auto& [id, o] : out) {
    const bool known = kKnownFailures.count(id) > 0;
    std::printf("criterion %2d: %s  %s [%.1f s]%s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), o.seconds,
                known ? (o.pass ? " (listed as known failure, now passes)" : " (known failure)") : "");
    if (o.pass == known) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}

}  // namespace
}  // namespace velmfg

int main() { return velmfg::Main(); }
