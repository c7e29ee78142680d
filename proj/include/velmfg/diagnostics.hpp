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

// Equilibrium checks for a candidate ensemble: best responses and Nash gaps,
// Euler-Lagrange residuals, the field bounds, monokineticity and the
// small-horizon uniqueness probe.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "velmfg/core.hpp"
#include "velmfg/ensemble.hpp"
#include "velmfg/macro.hpp"
#include "velmfg/parallel.hpp"
#include "velmfg/solver.hpp"

namespace velmfg {

// ---------------------------------------------------------------------------
// Best response

// F(omega, Q) over nodes 1..M of omega with omega(0) fixed; Q frozen.
class DeviatorObjective : public Objective {
 public:
  DeviatorObjective(const Ensemble& e, int population, std::span<const double> start)
      : e_(e), pop_(population), nodes_(e.stride()), stiffness_(e.steps()), trial_stiffness_(e.steps()) {
    std::copy(start.begin(), start.end(), nodes_.begin());
  }

  double Evaluate(std::span<const double> x, std::span<double> grad) override {
    const int d = e_.dim();
    std::copy(x.begin(), x.end(), nodes_.begin() + d);
    std::vector<double> g(nodes_.size());
    const double f = DeviatorCost(e_, pop_, nodes_, g.data(), trial_stiffness_.data());
    std::copy(g.begin() + d, g.end(), grad.begin());
    return f;
  }

  void Accept() override { stiffness_ = trial_stiffness_; }

  void Precondition(std::span<double> v) const override {
    const int m = e_.steps(), d = e_.dim();
    const double kappa = e_.model().populations[pop_].terminal.CurvatureBound();
    std::vector<double> tmp;
    for (int c = 0; c < d; ++c)
      SolveCurveStiffness(stiffness_.data(), m, kappa * e_.dt(), 1.0 / e_.dt(), v.data() + c, d, tmp);
  }

  std::vector<double> Nodes(std::span<const double> x) const {
    std::vector<double> out = nodes_;
    std::copy(x.begin(), x.end(), out.begin() + e_.dim());
    return out;
  }

 private:
  const Ensemble& e_;
  int pop_;
  std::vector<double> nodes_;
  std::vector<double> stiffness_, trial_stiffness_;
};

struct BestResponseResult {
  std::vector<double> nodes;  // (M + 1) * d
  double cost = 0.0;
  double incumbent_cost = 0.0;
  double self_share = 0.0;    // lambda w_i V(best, incumbent): weight of the frozen old curve
  bool stalled = false;
  int chosen_start = 0;
  std::vector<std::vector<double>> start_minimizers;
  std::vector<double> start_costs;
};

struct BestResponseOptions {
  int starts = 3;               // incumbent, straight line, then perturbed copies
  double perturbation = 0.05;
  std::uint64_t seed = 1;
  bool keep_all = false;        // store every start's minimizer
  bool random_only = false;     // every start is a perturbed straight line
};

inline std::vector<double> StraightLineGuess(const Ensemble& e, int pop, const double* x0, double speed_cap) {
  const int d = e.dim(), m = e.steps();
  const PopulationModel& pm = e.model().populations[pop];
  std::vector<double> g(d), out(static_cast<std::size_t>(m + 1) * d);
  pm.terminal.ValueGrad(x0, d, g.data());
  for (int c = 0; c < d; ++c) g[c] = -g[c] / pm.delta;
  double cap = speed_cap;
  if (e.domain().is_torus()) cap = std::min(cap, 0.4 * e.domain().min_period() / e.dt());
  const double speed = std::sqrt(SquaredNorm(g.data(), d));
  if (speed > cap)
    for (int c = 0; c < d; ++c) g[c] *= cap / speed;
  for (int k = 0; k <= m; ++k)
    for (int c = 0; c < d; ++c) out[k * d + c] = x0[c] + k * e.dt() * g[c];
  return out;
}

inline BestResponseResult BestResponse(int i, const Ensemble& e, const SolveConfig& cfg,
                                       const BestResponseOptions& opt = {}) {
  const int d = e.dim(), m = e.steps();
  const int pop = e.population(i);
  const std::span<const double> incumbent = e.curve_nodes(i);
  std::vector<std::vector<double>> starts;
  std::mt19937_64 rng = MakeRng(opt.seed, 7919 + static_cast<std::uint64_t>(i));
  std::normal_distribution<double> normal(0.0, opt.perturbation);
  const std::vector<double> line = StraightLineGuess(e, pop, incumbent.data(), cfg.speed_cap);
  if (!opt.random_only) {
    starts.emplace_back(incumbent.begin(), incumbent.end());
    if (opt.starts > 1) starts.push_back(line);
  }
  while (static_cast<int>(starts.size()) < opt.starts) {
    std::vector<double> s = line;
    for (int k = 1; k <= m; ++k)
      for (int c = 0; c < d; ++c) s[k * d + c] += normal(rng);
    starts.push_back(std::move(s));
  }

  BestResponseResult out;
  out.incumbent_cost = DeviatorCost(e, pop, incumbent);
  bool have = false;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    DeviatorObjective obj(e, pop, starts[s]);
    std::vector<double> x0(starts[s].begin() + d, starts[s].end());
    MinimizeResult r = MinimizeObjective(obj, std::move(x0), cfg);
    const double cost = r.report.final_energy();
    std::vector<double> nodes = obj.Nodes(r.x);
    out.start_costs.push_back(cost);
    if (opt.keep_all) out.start_minimizers.push_back(nodes);
    if (!have || cost < out.cost) {
      have = true;
      out.cost = cost;
      out.nodes = std::move(nodes);
      out.stalled = r.report.reason == Termination::kStalled;
      out.chosen_start = static_cast<int>(s);
    }
  }
  const DiscreteCurve best{out.nodes, m, d, e.dt(), &e.domain()};
  out.self_share = e.model().lambda * e.weight(i) * PairInteraction(best, e.curve(i), e.kernel());
  return out;
}

struct ExploitabilityReport {
  std::vector<int> particles;
  std::vector<double> agent_cost, best_cost, gap, relative_gap, self_share;
  double max_gap = 0.0, mean_gap = 0.0, weighted_gap = 0.0, max_relative_gap = 0.0;
  int stalled = 0;
};

// subset > 0 evaluates that many particles drawn without replacement.
inline ExploitabilityReport Exploitability(const Ensemble& e, const SolveConfig& cfg, const BestResponseOptions& opt,
                                           int subset = 0) {
  ExploitabilityReport rep;
  std::vector<int> idx(e.size());
  for (int i = 0; i < e.size(); ++i) idx[i] = i;
  if (subset > 0 && subset < e.size()) {
    std::mt19937_64 rng = MakeRng(opt.seed, 0x5eed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(subset);
    std::sort(idx.begin(), idx.end());
  }
  const int n = static_cast<int>(idx.size());
  rep.particles = idx;
  rep.agent_cost.resize(n);
  rep.best_cost.resize(n);
  rep.gap.resize(n);
  rep.relative_gap.resize(n);
  rep.self_share.resize(n);
  std::vector<int> stalled(n, 0);
  ParallelFor(n, [&](int t) {
    const int i = idx[t];
    const BestResponseResult br = BestResponse(i, e, cfg, opt);
    rep.agent_cost[t] = br.incumbent_cost;
    rep.best_cost[t] = br.cost;
    rep.gap[t] = br.incumbent_cost - br.cost;
    rep.relative_gap[t] = rep.gap[t] / (1.0 + std::abs(br.incumbent_cost));
    rep.self_share[t] = br.self_share;
    stalled[t] = br.stalled ? 1 : 0;
  });
  double wsum = 0.0;
  for (int t = 0; t < n; ++t) {
    rep.max_gap = std::max(rep.max_gap, rep.gap[t]);
    rep.max_relative_gap = std::max(rep.max_relative_gap, rep.relative_gap[t]);
    rep.mean_gap += rep.gap[t] / n;
    rep.weighted_gap += e.weight(idx[t]) * rep.gap[t];
    wsum += e.weight(idx[t]);
    rep.stalled += stalled[t];
  }
  rep.weighted_gap /= wsum;
  return rep;
}

// ---------------------------------------------------------------------------
// Euler-Lagrange residuals
//
// z_k = delta v_k + lambda (a v_k - au) with the fields at the interval
// midpoint; r_n = (z_n - z_{n-1}) / dt - R_n, where R_n averages the
// alignment force (lambda/2) grad [a |v - u|^2 + sigma] at node n over the
// two adjacent intervals, each with its own velocity.

struct ElReport {
  std::vector<double> residual;        // N * (M - 1) norms, particle-major
  std::vector<double> transversality;  // N norms
  std::vector<double> z;               // N * M * d
  double max_residual = 0.0;
  double max_transversality = 0.0;
  double z_sup = 0.0;                  // max |z_k|
  double max_speed = 0.0;
  double max_acceleration = 0.0;       // max |v_k - v_{k-1}| / dt
};

inline ElReport ElResiduals(const Ensemble& e) {
  const int n = e.size(), m = e.steps(), d = e.dim();
  const double lambda = e.model().lambda, dt = e.dt();
  std::vector<IntervalSnapshot> left, mid, right;
  for (int k = 0; k < m; ++k) {
    left.push_back(Snapshot(e, k, 0.0));
    mid.push_back(Snapshot(e, k, 0.5));
    right.push_back(Snapshot(e, k, 1.0));
  }
  ElReport rep;
  rep.residual.assign(static_cast<std::size_t>(n) * std::max(0, m - 1), 0.0);
  rep.transversality.assign(n, 0.0);
  rep.z.assign(static_cast<std::size_t>(n) * m * d, 0.0);
  std::vector<double> speed(n, 0.0), accel(n, 0.0);
  ParallelFor(n, [&](int i) {
    const PopulationModel& pm = e.population_model(i);
    double* z = rep.z.data() + static_cast<std::size_t>(i) * m * d;
    for (int k = 0; k < m; ++k) {
      const std::span<const double> x(mid[k].x.data() + static_cast<std::size_t>(i) * d, d);
      const std::span<const double> v(mid[k].v.data() + static_cast<std::size_t>(i) * d, d);
      const MacroSample f = MacroEvalSnapshot(e, mid[k], x);
      for (int c = 0; c < d; ++c) z[k * d + c] = pm.delta * v[c] + lambda * (f.a * v[c] - f.au[c]);
      speed[i] = std::max(speed[i], std::sqrt(SquaredNorm(v.data(), d)));
      if (k > 0) {
        double s = 0.0;
        for (int c = 0; c < d; ++c) {
          const double dv = v[c] - mid[k - 1].v[i * d + c];
          s += dv * dv;
        }
        accel[i] = std::max(accel[i], std::sqrt(s) / dt);
      }
    }
    for (int node = 1; node < m; ++node) {
      const std::span<const double> x(e.node(i, node), d);
      const std::span<const double> v_prev(left[node - 1].v.data() + static_cast<std::size_t>(i) * d, d);
      const std::span<const double> v_next(left[node].v.data() + static_cast<std::size_t>(i) * d, d);
      const Point r_prev = AlignmentForceFromFields(MacroEvalSnapshot(e, right[node - 1], x), v_prev, lambda);
      const Point r_next = AlignmentForceFromFields(MacroEvalSnapshot(e, left[node], x), v_next, lambda);
      double s = 0.0;
      for (int c = 0; c < d; ++c) {
        const double r = (z[node * d + c] - z[(node - 1) * d + c]) / dt - 0.5 * (r_prev[c] + r_next[c]);
        s += r * r;
      }
      rep.residual[static_cast<std::size_t>(i) * (m - 1) + (node - 1)] = std::sqrt(s);
    }
    std::vector<double> g(d);
    pm.terminal.ValueGrad(e.node(i, m), d, g.data());
    double s = 0.0;
    for (int c = 0; c < d; ++c) s += (z[(m - 1) * d + c] + g[c]) * (z[(m - 1) * d + c] + g[c]);
    rep.transversality[i] = std::sqrt(s);
  });
  for (int i = 0; i < n; ++i) {
    rep.max_transversality = std::max(rep.max_transversality, rep.transversality[i]);
    rep.max_speed = std::max(rep.max_speed, speed[i]);
    rep.max_acceleration = std::max(rep.max_acceleration, accel[i]);
  }
  for (double r : rep.residual) rep.max_residual = std::max(rep.max_residual, r);
  for (std::size_t p = 0; p < rep.z.size() / d; ++p)
    rep.z_sup = std::max(rep.z_sup, std::sqrt(SquaredNorm(rep.z.data() + p * d, d)));
  return rep;
}

// ---------------------------------------------------------------------------
// Bounds audit

struct AuditCheck {
  std::string name;
  bool holds = true;
  double worst_ratio = 0.0;  // max over samples of lhs / rhs (rhs > 0)
  int worst_k = -1;
  Point worst_x;
  int violations = 0;
};

struct AuditReport {
  std::vector<AuditCheck> checks;
  int samples = 0;
  double kernel_constant = 0.0;
  bool all_hold() const {
    for (const auto& c : checks)
      if (!c.holds) return false;
    return true;
  }
  const AuditCheck& check(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return c;
    throw Error("no audit check named " + name);
  }
};

// Random (t_k, x) samples: half near particles, half in the padded bounding
// box. The kernel constant is C with |grad eta| <= C eta on the sampled
// distances; checks that need it are skipped when it is infinite.
inline AuditReport BoundsAudit(const Ensemble& e, int samples, std::uint64_t seed) {
  const int d = e.dim(), m = e.steps(), n = e.size();
  const Kernel& kernel = e.kernel();
  const double A = kernel.sup(), W = e.model().total_mass();
  std::vector<double> lo(d, kInf), hi(d, -kInf);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k <= m; ++k)
      for (int c = 0; c < d; ++c) {
        lo[c] = std::min(lo[c], e.node(i, k)[c]);
        hi[c] = std::max(hi[c], e.node(i, k)[c]);
      }
  const double pad = 2.0 * kernel.length;
  double diameter = 0.0;
  for (int c = 0; c < d; ++c) diameter += (hi[c] - lo[c] + 2 * pad) * (hi[c] - lo[c] + 2 * pad);
  diameter = std::sqrt(diameter);
  if (e.domain().is_torus()) diameter = std::min(diameter, e.domain().half_diagonal());
  double ceta = kernel.GradientRatioBound(diameter);
  if (kernel.family == KernelFamily::kGaussian && !e.domain().is_torus()) ceta = kInf;

  const MomentSeries mom = Moments(e);
  AuditReport rep;
  rep.samples = samples;
  rep.kernel_constant = ceta;
  const std::vector<std::string> names = {
      "a <= A W",          "a|u| <= A M1",        "a|u|^2 <= A M2",        "sigma <= A M2",
      "|grad a| <= C a",   "|grad au| <= C A M1", "a|grad u| <= 2 C A M1", "a|grad u|^2 <= C^2 sigma",
      "C^2 sigma <= C^2 A M2", "|grad sigma| <= C sigma", "max speed * delta <= |z|_inf"};
  for (const auto& s : names) rep.checks.push_back(AuditCheck{s, true, 0.0, -1, {}, 0});

  auto record = [&](int idx, double lhs, double rhs, int k, const Point& x) {
    AuditCheck& c = rep.checks[idx];
    const double slack = 1e-12 * (std::abs(rhs) + std::abs(lhs)) + 1e-300;
    if (lhs > rhs + slack) {
      if (c.holds) {
        c.worst_k = k;
        c.worst_x = x;
      }
      c.holds = false;
      ++c.violations;
    }
    if (rhs > 0.0 && lhs / rhs > c.worst_ratio) {
      c.worst_ratio = lhs / rhs;
      if (c.holds) {
        c.worst_k = k;
        c.worst_x = x;
      }
    }
  };

  std::mt19937_64 rng = MakeRng(seed, 0xA0D17);
  std::uniform_int_distribution<int> pick_k(0, m - 1), pick_i(0, n - 1);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, kernel.length);
  std::vector<int> ks(samples);
  std::vector<Point> xs(samples, Point(d));
  for (int s = 0; s < samples; ++s) {
    ks[s] = pick_k(rng);
    if (s % 2 == 0) {
      const int i = pick_i(rng);
      for (int c = 0; c < d; ++c) xs[s][c] = e.node(i, ks[s])[c] + normal(rng);
    } else {
      for (int c = 0; c < d; ++c) xs[s][c] = lo[c] - pad + uni(rng) * (hi[c] - lo[c] + 2 * pad);
    }
  }
  std::vector<MacroSample> fs(samples);
  ParallelFor(samples, [&](int s) { fs[s] = MacroEval(e, ks[s], xs[s], 0.0); });
  const bool use_c = std::isfinite(ceta);
  for (int s = 0; s < samples; ++s) {
    const MacroSample& f = fs[s];
    const int k = ks[s];
    const double M1 = mom.m1[k], M2 = mom.m2[k];
    const double u2 = SquaredNorm(f.u.data(), d);
    double gu2 = 0.0, gau2 = 0.0;
    for (int c = 0; c < d * d; ++c) {
      gu2 += f.grad_u[c] * f.grad_u[c];
      gau2 += f.grad_au[c] * f.grad_au[c];
    }
    record(0, f.a, A * W, k, f.x);
    record(1, std::sqrt(SquaredNorm(f.au.data(), d)), A * M1, k, f.x);
    record(2, f.a * u2, A * M2, k, f.x);
    record(3, f.sigma, A * M2, k, f.x);
    if (use_c) {
      record(4, std::sqrt(SquaredNorm(f.grad_a.data(), d)), ceta * f.a, k, f.x);
      record(5, std::sqrt(gau2), ceta * A * M1, k, f.x);
      record(6, f.a * std::sqrt(gu2), 2.0 * ceta * A * M1, k, f.x);
      record(7, f.a * gu2, ceta * ceta * f.sigma, k, f.x);
      record(8, ceta * ceta * f.sigma, ceta * ceta * A * M2, k, f.x);
      record(9, std::sqrt(SquaredNorm(f.grad_sigma.data(), d)), ceta * f.sigma, k, f.x);
    }
  }
  const ElReport el = ElResiduals(e);
  {
    AuditCheck& c = rep.checks[10];
    const double lhs = el.max_speed * e.model().min_delta();
    c.worst_ratio = el.z_sup > 0.0 ? lhs / el.z_sup : 0.0;
    c.holds = lhs <= el.z_sup * (1.0 + 1e-9) + 1e-300;
    if (!c.holds) c.violations = 1;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Monokineticity

// Node velocity: mean of the adjacent interval velocities, the last interval
// at t = T. Nodes k = 1..M.
inline std::vector<double> NodeVelocities(const Ensemble& e) {
  const int n = e.size(), m = e.steps(), d = e.dim();
  const std::vector<double> vel = detail::AllVelocities(e);
  std::vector<double> out(static_cast<std::size_t>(n) * m * d);
  for (int i = 0; i < n; ++i)
    for (int k = 1; k <= m; ++k)
      for (int c = 0; c < d; ++c) {
        const double prev = vel[(static_cast<std::size_t>(i) * m + k - 1) * d + c];
        const double next = k < m ? vel[(static_cast<std::size_t>(i) * m + k) * d + c] : prev;
        out[(static_cast<std::size_t>(i) * m + k - 1) * d + c] = 0.5 * (prev + next);
      }
  return out;
}

// Per-node maxima of |v_i - v_j| over pairs within distance r, nodes 1..M.
// same_population restricts pairs to one population.
inline std::vector<double> MonokineticitySeries(const Ensemble& e, double r, bool same_population = false) {
  if (!(r > 0.0)) throw Error("monokineticity radius must be > 0");
  const int n = e.size(), m = e.steps(), d = e.dim();
  const std::vector<double> nv = NodeVelocities(e);
  std::vector<double> series(m, 0.0);
  ParallelFor(m, [&](int k1) {
    const int k = k1 + 1;
    std::vector<double> z(d);
    double best = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        if (same_population && e.population(i) != e.population(j)) continue;
        e.domain().Displacement(e.node(i, k), e.node(j, k), z.data());
        if (SquaredNorm(z.data(), d) > r * r) continue;
        double s = 0.0;
        for (int c = 0; c < d; ++c) {
          const double dv = nv[(static_cast<std::size_t>(i) * m + k1) * d + c] -
                            nv[(static_cast<std::size_t>(j) * m + k1) * d + c];
          s += dv * dv;
        }
        best = std::max(best, std::sqrt(s));
      }
    series[k1] = best;
  });
  return series;
}

inline double MonokineticityIndex(const Ensemble& e, double r, bool same_population = false) {
  const std::vector<double> s = MonokineticitySeries(e, r, same_population);
  return s.empty() ? 0.0 : *std::max_element(s.begin(), s.end());
}

// ---------------------------------------------------------------------------
// Uniqueness probe

struct UniquenessReport {
  double dispersion = 0.0;  // max pairwise sup-node distance
  std::vector<double> costs;
};

// Best responses of particle i from n_starts random initializations.
inline UniquenessReport UniquenessProbe(const Ensemble& e, int i, int n_starts, const SolveConfig& cfg,
                                        double perturbation, std::uint64_t seed) {
  if (n_starts < 2) throw Error("uniqueness probe needs at least two starts");
  BestResponseOptions opt;
  opt.starts = n_starts;
  opt.perturbation = perturbation;
  opt.seed = seed;
  opt.keep_all = true;
  opt.random_only = true;
  const BestResponseResult br = BestResponse(i, e, cfg, opt);
  UniquenessReport rep;
  rep.costs = br.start_costs;
  const auto& mins = br.start_minimizers;
  for (std::size_t a = 0; a < mins.size(); ++a)
    for (std::size_t b = a + 1; b < mins.size(); ++b)
      for (std::size_t c = 0; c < mins[a].size(); ++c)
        rep.dispersion = std::max(rep.dispersion, std::abs(mins[a][c] - mins[b][c]));
  return rep;
}

}  // namespace velmfg
