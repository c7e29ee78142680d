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

// Experiment pipelines behind the command line. Every pipeline returns its
// artifacts in memory; everything except timing.json is a deterministic
// function of the scenario and seed.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "velmfg/core.hpp"
#include "velmfg/diagnostics.hpp"
#include "velmfg/ensemble.hpp"
#include "velmfg/eulerian.hpp"
#include "velmfg/io.hpp"
#include "velmfg/macro.hpp"
#include "velmfg/presets.hpp"
#include "velmfg/scenario.hpp"
#include "velmfg/solver.hpp"

namespace velmfg {

struct RunArtifacts {
  std::vector<std::pair<std::string, std::string>> files;  // name -> contents
  Json report;
  Json timing;
  std::optional<Ensemble> ensemble;

  const std::string& file(const std::string& name) const {
    for (const auto& f : files)
      if (f.first == name) return f.second;
    throw Error("no artifact named " + name);
  }
  bool has(const std::string& name) const {
    for (const auto& f : files)
      if (f.first == name) return true;
    return false;
  }
};

struct RunOptions {
  std::string trajectories;  // verify / fields: existing trajectory table (empty: solve first)
};

inline const std::vector<std::string>& Commands() {
  static const std::vector<std::string> c = {"solve", "verify", "fields", "eulerian", "gradcheck", "lane-demo"};
  return c;
}

class StageError : public Error {
 public:
  // invalid_input: the cause was a validation or parse error, not a failed computation.
  StageError(const std::string& stage, const std::string& what, bool invalid_input = false)
      : Error("[" + stage + "] " + what), invalid_input_(invalid_input) {}
  bool invalid_input() const { return invalid_input_; }

 private:
  bool invalid_input_;
};

namespace detail {

inline Json ReportJson(const SolveReport& r) {
  return {{"termination", TerminationName(r.reason)}, {"iterations", r.iterations},
          {"gradient_norm", r.gradient_norm},       {"final_energy", r.final_energy()},
          {"chosen_start", r.chosen_start},         {"start_energies", r.start_energies}};
}

inline std::string EnergyTable(const SolveReport& r, const std::string& hash) {
  Table t(hash, {"step", "energy"});
  for (std::size_t s = 0; s < r.energy_history.size(); ++s) t.Row({static_cast<double>(s), r.energy_history[s]});
  return t.str();
}

template <class F>
auto Stage(const std::string& name, F&& f, Json& timing) {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      timing[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } else {
      auto r = f();
      timing[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      return r;
    }
  } catch (const StageError&) {
    throw;
  } catch (const ValidationError& e) {
    throw StageError(name, e.what(), true);
  } catch (const ParseError& e) {
    throw StageError(name, e.what(), true);
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

inline std::pair<Ensemble, SolveReport> SolveScenario(const Scenario& sc) {
  SolveConfig cfg = sc.solver;
  cfg.seed = sc.seed;
  Ensemble init = InitializeEnsemble(sc, sc.seed);
  return MinimizeEnergy(init, cfg, MirrorMap(sc));
}

inline Ensemble ObtainEnsemble(const Scenario& sc, const RunOptions& opt, RunArtifacts& art, const std::string& hash) {
  if (!opt.trajectories.empty())
    return Stage("load-trajectories", [&] { return LoadTrajectories(sc, opt.trajectories); }, art.timing);
  auto [sol, rep] = Stage("solve", [&] { return SolveScenario(sc); }, art.timing);
  art.report["solve"] = ReportJson(rep);
  art.files.emplace_back("trajectories.csv", TrajectoryTable(sol, hash));
  art.files.emplace_back("energy.csv", EnergyTable(rep, hash));
  return sol;
}

// Max relative deviation |g - g_fd|_inf / |g_fd|_inf of the analytic
// gradient from central differences of J.
struct GradientCheck {
  double max_relative_error = 0.0;
  double gradient_inf = 0.0;
  int coordinates = 0;
};

inline GradientCheck CheckGradient(const Ensemble& e, double step = 1e-5) {
  const std::vector<double> g = EnergyGradient(e);
  Ensemble work = e;
  std::vector<double> x = e.FreeNodes();
  std::vector<double> fd(x.size());
  for (std::size_t c = 0; c < x.size(); ++c) {
    const double x0 = x[c];
    x[c] = x0 + step;
    work.SetFreeNodes(x);
    const double fp = TotalEnergy(work);
    x[c] = x0 - step;
    work.SetFreeNodes(x);
    const double fm = TotalEnergy(work);
    x[c] = x0;
    fd[c] = (fp - fm) / (2.0 * step);
  }
  const int d = e.dim(), m = e.steps();
  double err = 0.0, scale = 0.0;
  for (int i = 0; i < e.size(); ++i)
    for (int k = 1; k <= m; ++k)
      for (int c = 0; c < d; ++c) {
        const std::size_t free = (static_cast<std::size_t>(i) * m + (k - 1)) * d + c;
        const double ga = g[i * e.stride() + static_cast<std::size_t>(k) * d + c];
        err = std::max(err, std::abs(ga - fd[free]));
        scale = std::max(scale, std::abs(fd[free]));
      }
  return GradientCheck{scale > 0.0 ? err / scale : err, scale, static_cast<int>(x.size())};
}

inline EulerProblem EulerProblemFor(const Scenario& sc) {
  if (!sc.domain.is_torus() || sc.domain.dim() != 1) throw ValidationError("eulerian: needs a 1D torus scenario");
  if (sc.populations.size() != 1) throw ValidationError("eulerian: needs exactly one population");
  const Model model = sc.model();
  const PopulationSpec& p = sc.populations[0];
  EulerProblem pb;
  pb.grid = PeriodicGrid{sc.eulerian.cells, sc.domain.periods()[0]};
  pb.slabs = sc.steps;
  pb.dt = model.dt();
  pb.delta = p.delta;
  pb.lambda = sc.lambda;
  pb.kernel = sc.kernel;
  pb.terminal = model.populations[0].terminal;
  const double h = pb.grid.spacing();
  switch (p.sampler.kind) {
    case SamplerKind::kGaussian:
      pb.m0 = GriddedGaussian(pb.grid, p.sampler.mean[0], p.sampler.stddev[0], p.mass);
      break;
    case SamplerKind::kUniformBox: {
      pb.m0.assign(pb.grid.cells, 0.0);
      const double lo = p.sampler.lo[0], hi = p.sampler.hi[0];
      for (int m = 0; m < pb.grid.cells; ++m) {
        // Overlap of cell m with [lo, hi] modulo the period.
        double cover = 0.0;
        for (int w = -2; w <= 2; ++w) {
          const double a = m * h + w * pb.grid.length, b = a + h;
          cover += std::max(0.0, std::min(b, hi) - std::max(a, lo));
        }
        pb.m0[m] = cover;
      }
      const double total = detail::MassOf(pb.m0, h);
      if (!(total > 0.0)) {
        // Degenerate box: deposit on the nearest cell.
        double pos = lo - pb.grid.length * std::floor(lo / pb.grid.length);
        pb.m0[std::min(pb.grid.cells - 1, static_cast<int>(pos / h))] = 1.0;
      }
      const double t2 = detail::MassOf(pb.m0, h);
      for (double& r : pb.m0) r *= p.mass / t2;
      break;
    }
    case SamplerKind::kPoints: {
      std::vector<double> x, w;
      for (const auto& pt : p.sampler.points) {
        x.push_back(pt[0]);
        w.push_back(p.mass / p.count);
      }
      pb.m0 = ProjectDensity(pb.grid, x, w, {}, sc.eulerian.bandwidth_cells * h);
      break;
    }
    case SamplerKind::kMirror:
      throw ValidationError("eulerian: single population cannot mirror");
  }
  return pb;
}

}  // namespace detail

// Executes one pipeline. Errors carry the failing stage in brackets.
inline RunArtifacts RunCommand(const Scenario& sc, const std::string& command, const RunOptions& opt = {}) {
  if (std::find(Commands().begin(), Commands().end(), command) == Commands().end())
    throw ValidationError("unknown command '" + command + "'");
  RunArtifacts art;
  art.report = Json::object();
  art.timing = Json::object();
  detail::Stage("validate", [&] { sc.Validate(); }, art.timing);
  const std::string hash = ScenarioHash(sc);
  art.report["command"] = command;
  art.report["scenario_hash"] = hash;
  art.files.emplace_back("scenario.json", WriteScenario(sc));

  if (command == "solve") {
    Ensemble sol = detail::ObtainEnsemble(sc, RunOptions{}, art, hash);
    art.ensemble = std::move(sol);
  } else if (command == "verify") {
    if (opt.trajectories.empty()) throw StageError("verify", "verify needs a trajectory table from a previous solve", true);
    const Ensemble e = detail::ObtainEnsemble(sc, opt, art, hash);
    SolveConfig cfg = sc.solver;
    cfg.seed = sc.seed;
    BestResponseOptions bro;
    bro.starts = sc.diagnostics.best_response_starts;
    bro.perturbation = sc.diagnostics.best_response_perturbation;
    bro.seed = sc.seed;
    const ExploitabilityReport ex = detail::Stage(
        "exploitability", [&] { return Exploitability(e, cfg, bro, sc.diagnostics.exploitability_subset); },
        art.timing);
    const ElReport el = detail::Stage("el-residual", [&] { return ElResiduals(e); }, art.timing);
    const AuditReport audit =
        detail::Stage("bounds-audit", [&] { return BoundsAudit(e, sc.diagnostics.audit_samples, sc.seed); }, art.timing);
    const bool multi = sc.populations.size() > 1;
    const std::vector<double> mono = MonokineticitySeries(e, sc.monokinetic_radius(), multi);
    const EnergyEvaluation ev = EvaluateEnergy(e, false);

    Json jex = {{"particles", ex.particles},     {"agent_cost", ex.agent_cost}, {"best_cost", ex.best_cost},
                {"gap", ex.gap},                 {"relative_gap", ex.relative_gap},
                {"self_share", ex.self_share},   {"max_gap", ex.max_gap},
                {"mean_gap", ex.mean_gap},       {"weighted_gap", ex.weighted_gap},
                {"max_relative_gap", ex.max_relative_gap}, {"stalled", ex.stalled}};
    Json jel = {{"max_residual", el.max_residual},
                {"max_transversality", el.max_transversality},
                {"transversality_constant", el.max_transversality / e.dt()},
                {"transversality", el.transversality},
                {"z_sup", el.z_sup},
                {"speed_bound", el.z_sup / e.model().min_delta()},
                {"max_speed", el.max_speed},
                {"max_acceleration", el.max_acceleration}};
    Json jaudit = Json::array();
    for (const auto& c : audit.checks)
      jaudit.push_back({{"check", c.name}, {"holds", c.holds}, {"worst_ratio", c.worst_ratio},
                        {"violations", c.violations}, {"worst_k", c.worst_k}, {"worst_x", c.worst_x}});
    art.report["energy"] = ev.total;
    art.report["exploitability"] = jex;
    art.report["euler_lagrange"] = jel;
    art.report["bounds_audit"] = {{"samples", audit.samples}, {"kernel_constant", std::isfinite(audit.kernel_constant)
                                                                                     ? Json(audit.kernel_constant)
                                                                                     : Json("inf")},
                                  {"all_hold", audit.all_hold()}, {"checks", jaudit}};
    art.report["monokineticity"] = {{"radius", sc.monokinetic_radius()},
                                    {"same_population_only", multi},
                                    {"index", mono.empty() ? 0.0 : *std::max_element(mono.begin(), mono.end())},
                                    {"series", mono}};
    art.ensemble = e;
  } else if (command == "fields") {
    const Ensemble e = detail::ObtainEnsemble(sc, opt, art, hash);
    const int d = e.dim();
    if (d > 2) throw StageError("fields", "field export supports d <= 2", true);
    // Regular grid over the padded bounding box (the whole period on a torus).
    std::vector<double> lo(d, kInf), hi(d, -kInf);
    for (int i = 0; i < e.size(); ++i)
      for (int k = 0; k <= e.steps(); ++k)
        for (int c = 0; c < d; ++c) {
          lo[c] = std::min(lo[c], e.node(i, k)[c] - 2.0 * sc.kernel.length);
          hi[c] = std::max(hi[c], e.node(i, k)[c] + 2.0 * sc.kernel.length);
        }
    if (e.domain().is_torus())
      for (int c = 0; c < d; ++c) {
        lo[c] = 0.0;
        hi[c] = e.domain().periods()[c];
      }
    const int per = d == 1 ? 128 : 32;
    std::vector<double> spacing(d);
    for (int c = 0; c < d; ++c) spacing[c] = (hi[c] - lo[c]) / per;
    double bw = 0.0;
    for (double s : spacing) bw = std::max(bw, 2.0 * s);
    std::vector<std::string> cols = {"time", "point"};
    for (int c = 0; c < d; ++c) cols.push_back("x" + std::to_string(c));
    cols.push_back("a");
    for (int c = 0; c < d; ++c) cols.push_back("u" + std::to_string(c));
    cols.push_back("sigma");
    cols.push_back("rho");
    Table t(hash, cols);
    const int points = d == 1 ? per : per * per;
    detail::Stage(
        "fields",
        [&] {
          std::vector<double> row, z(d);
          for (int k = 0; k < e.steps(); ++k) {
            const IntervalSnapshot s = Snapshot(e, k, 0.0);
            std::vector<std::vector<double>> rows(points);
            ParallelFor(points, [&](int p) {
              Point x(d), zz(d);
              for (int c = 0, rem = p; c < d; ++c, rem /= per) x[c] = lo[c] + (rem % per + 0.5) * spacing[c];
              const MacroSample f = MacroEvalSnapshot(e, s, x);
              double rho = 0.0;
              for (int j = 0; j < e.size(); ++j) {
                e.domain().Displacement(x.data(), s.x.data() + static_cast<std::size_t>(j) * d, zz.data());
                rho += e.weight(j) * std::exp(-0.5 * SquaredNorm(zz.data(), d) / (bw * bw)) /
                       std::pow(std::sqrt(2.0 * std::numbers::pi) * bw, d);
              }
              std::vector<double>& r = rows[p];
              r = {k * e.dt(), static_cast<double>(p)};
              r.insert(r.end(), x.begin(), x.end());
              r.push_back(f.a);
              r.insert(r.end(), f.u.begin(), f.u.end());
              r.push_back(f.sigma);
              r.push_back(rho);
            });
            for (const auto& r : rows) t.Row(r);
          }
        },
        art.timing);
    art.files.emplace_back("fields.csv", t.str());
    art.report["fields"] = {{"points_per_time", points}, {"density_bandwidth", bw}};
    art.ensemble = e;
  } else if (command == "eulerian") {
    const EulerProblem pb = detail::Stage("eulerian-setup", [&] { return detail::EulerProblemFor(sc); }, art.timing);
    PicardOptions po{sc.eulerian.damping, sc.eulerian.tolerance, sc.eulerian.max_iterations};
    const PicardReport pr = detail::Stage("picard", [&] { return PicardSolve(pb, po); }, art.timing);
    const Ensemble e = detail::ObtainEnsemble(sc, RunOptions{}, art, hash);
    const double bw = sc.eulerian.bandwidth_cells * pb.grid.spacing();
    const std::vector<double> l1 = detail::Stage("cross-validate", [&] { return CrossValidate(e, pr.state, bw); },
                                                 art.timing);
    const int nx = pb.grid.cells;
    Table st(hash, {"time", "cell", "x", "rho", "phi"});
    for (int k = 0; k <= pb.slabs; ++k)
      for (int m = 0; m < nx; ++m)
        st.Row({k * pb.dt, static_cast<double>(m), pb.grid.center(m), pr.state.rho[static_cast<std::size_t>(k) * nx + m],
                pr.state.phi[static_cast<std::size_t>(k) * nx + m]});
    Table res(hash, {"iteration", "residual"});
    for (std::size_t i = 0; i < pr.residual_history.size(); ++i)
      res.Row({static_cast<double>(i + 1), pr.residual_history[i]});
    Table cv(hash, {"time", "l1"});
    for (int k = 0; k <= pb.slabs; ++k) cv.Row({k * pb.dt, l1[k]});
    art.files.emplace_back("eulerian_state.csv", st.str());
    art.files.emplace_back("picard_residuals.csv", res.str());
    art.files.emplace_back("crossval.csv", cv.str());

    // Eulerian functional of the projected ensemble against its own energies.
    std::vector<double> rho, mom, x(e.size()), v(e.size());
    for (int k = 0; k < e.steps(); ++k) {
      const IntervalSnapshot s = Snapshot(e, k, 0.5);
      for (int i = 0; i < e.size(); ++i) {
        x[i] = s.x[i];
        v[i] = s.v[i];
      }
      const auto r = ProjectDensity(pb.grid, x, e.weights(), {}, bw);
      const auto w = ProjectDensity(pb.grid, x, e.weights(), v, bw);
      rho.insert(rho.end(), r.begin(), r.end());
      mom.insert(mom.end(), w.begin(), w.end());
    }
    const double eul = EulerianEnergy(pb.grid, e.dt(), rho, mom, sc.kernel, pb.delta, sc.lambda);
    const EnergyEvaluation ev = EvaluateEnergy(e, false);
    double lag = 0.0;
    for (int i = 0; i < e.size(); ++i) lag += e.weight(i) * (pb.delta * ev.kinetic[i] + sc.lambda * ev.interaction[i]);
    art.report["picard"] = {{"converged", pr.converged},
                            {"iterations", pr.iterations},
                            {"final_residual", pr.residual_history.empty() ? 0.0 : pr.residual_history.back()},
                            {"mass_error", pr.mass_error},
                            {"min_density", pr.min_density}};
    art.report["cross_validation"] = {{"bandwidth", bw}, {"l1_final", l1.back()}, {"l1_series", l1}};
    art.report["eulerian_energy"] = {{"projected", eul}, {"lagrangian_kinetic_plus_alignment", lag}};
    art.ensemble = e;
  } else if (command == "gradcheck") {
    Scenario s2 = sc;
    if (s2.solver.perturbation == 0.0) s2.solver.perturbation = 0.1;
    const Ensemble e = InitializeEnsemble(s2, sc.seed);
    const detail::GradientCheck gc = detail::Stage("gradcheck", [&] { return detail::CheckGradient(e); }, art.timing);
    art.report["gradcheck"] = {{"step", 1e-5},
                               {"coordinates", gc.coordinates},
                               {"gradient_inf", gc.gradient_inf},
                               {"max_relative_error", gc.max_relative_error},
                               {"passes", gc.max_relative_error <= 1e-6}};
    art.ensemble = e;
  } else if (command == "lane-demo") {
    if (sc.populations.size() < 2) throw StageError("lane-demo", "lane demo needs two populations", true);
    const Ensemble e = detail::ObtainEnsemble(sc, RunOptions{}, art, hash);
    const double r = sc.segregation_radius();
    const std::vector<double> seg = detail::Stage("segregation", [&] { return SegregationSeries(e, r); }, art.timing);
    Table t(hash, {"time", "segregation"});
    for (int k = 0; k <= e.steps(); ++k) t.Row({k * e.dt(), seg[k]});
    art.files.emplace_back("segregation.csv", t.str());
    art.report["segregation"] = {{"radius", r},
                                 {"exploratory", true},
                                 {"initial", seg.front()},
                                 {"final", seg.back()},
                                 {"series", seg}};
    art.ensemble = e;
  }
  art.files.emplace_back("report.json", art.report.dump(2) + "\n");
  return art;
}

inline void WriteArtifacts(const RunArtifacts& art, const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto put = [&](const std::string& name, const std::string& text) {
    std::ofstream out(std::filesystem::path(dir) / name, std::ios::binary);
    if (!out) throw Error("cannot write " + (std::filesystem::path(dir) / name).string());
    out << text;
  };
  for (const auto& [name, text] : art.files) put(name, text);
  put("timing.json", art.timing.dump(2) + "\n");
}

}  // namespace velmfg
