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

// Descent on the discrete energy with the initial nodes frozen.
//
// The direction is preconditioned limited-memory BFGS (memory 0 gives plain
// preconditioned gradient descent). The preconditioner is the tridiagonal
// kinetic-plus-alignment stiffness of each curve, which is the exact Hessian
// of the velocity-quadratic part of the energy with the kernel frozen.
// Accepted steps satisfy the Armijo condition and strictly decrease the
// objective.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "velmfg/core.hpp"
#include "velmfg/ensemble.hpp"

namespace velmfg {

struct SolveConfig {
  int max_iterations = 10000;
  double gradient_tolerance = 1e-8;  // on |grad|_2 / (1 + |J|)
  double armijo_c1 = 1e-4;
  double backtrack = 0.5;
  double initial_step = 1.0;
  int max_backtracks = 60;
  int memory = 8;                    // 0: preconditioned gradient descent
  bool precondition = true;
  int starts = 1;
  double perturbation = 0.0;         // zeta, std of interior-node noise
  double speed_cap = 10.0;           // on the straight-line initial guess
  bool still_start = false;          // add the still ensemble as a start
  std::uint64_t seed = 1;

  void Validate() const {
    if (max_iterations < 0) throw ValidationError("solver max_iterations must be >= 0");
    if (!(gradient_tolerance > 0.0)) throw ValidationError("solver gradient_tolerance must be > 0");
    if (!(armijo_c1 > 0.0 && armijo_c1 < 1.0)) throw ValidationError("solver armijo_c1 must lie in (0,1)");
    if (!(backtrack > 0.0 && backtrack < 1.0)) throw ValidationError("solver backtrack must lie in (0,1)");
    if (!(initial_step > 0.0)) throw ValidationError("solver initial_step must be > 0");
    if (max_backtracks < 1) throw ValidationError("solver max_backtracks must be >= 1");
    if (memory < 0) throw ValidationError("solver memory must be >= 0");
    if (starts < 1) throw ValidationError("solver starts must be >= 1");
    if (!(perturbation >= 0.0)) throw ValidationError("solver perturbation must be >= 0");
    if (!(speed_cap > 0.0)) throw ValidationError("solver speed_cap must be > 0");
  }
  bool operator==(const SolveConfig&) const = default;
};

enum class Termination { kConverged, kMaxIterations, kStalled };

inline const char* TerminationName(Termination t) {
  switch (t) {
    case Termination::kConverged:
      return "converged";
    case Termination::kMaxIterations:
      return "max-iter";
    case Termination::kStalled:
      return "stalled";
  }
  return "unknown";
}

struct SolveReport {
  std::vector<double> energy_history;  // value at the start and after every accepted step
  double gradient_norm = 0.0;
  int iterations = 0;
  double wall_seconds = 0.0;
  Termination reason = Termination::kMaxIterations;
  int chosen_start = 0;
  std::vector<double> start_energies;  // final value of every start

  double final_energy() const { return energy_history.back(); }
  bool converged() const { return reason == Termination::kConverged; }
};

// ---------------------------------------------------------------------------
// Generic minimizer

class Objective {
 public:
  virtual ~Objective() = default;
  // Value and gradient at x. May stash data describing x for Precondition.
  virtual double Evaluate(std::span<const double> x, std::span<double> grad) = 0;
  // The most recently evaluated point becomes the current iterate.
  virtual void Accept() {}
  // v <- P^{-1} v at the current iterate.
  virtual void Precondition(std::span<double> v) const { (void)v; }
};

struct MinimizeResult {
  std::vector<double> x;
  SolveReport report;
};

inline MinimizeResult MinimizeObjective(Objective& obj, std::vector<double> x, const SolveConfig& cfg) {
  cfg.Validate();
  const auto started = std::chrono::steady_clock::now();
  const std::size_t n = x.size();
  std::vector<double> g(n), g_trial(n), x_trial(n), p(n), q(n);
  struct Pair {
    std::vector<double> s, y;
    double rho;
  };
  std::deque<Pair> memory;

  MinimizeResult out;
  SolveReport& rep = out.report;
  double f = obj.Evaluate(x, g);
  obj.Accept();
  rep.energy_history.push_back(f);
  auto norm = [](const std::vector<double>& v) { return Norm(v); };
  double gnorm = norm(g);

  auto direction = [&]() {
    q = g;
    std::vector<double> alpha(memory.size());
    for (std::size_t m = memory.size(); m-- > 0;) {
      alpha[m] = memory[m].rho * Dot(memory[m].s.data(), q.data(), static_cast<int>(n));
      for (std::size_t c = 0; c < n; ++c) q[c] -= alpha[m] * memory[m].y[c];
    }
    if (cfg.precondition) obj.Precondition(q);
    for (std::size_t m = 0; m < memory.size(); ++m) {
      const double beta = memory[m].rho * Dot(memory[m].y.data(), q.data(), static_cast<int>(n));
      for (std::size_t c = 0; c < n; ++c) q[c] += memory[m].s[c] * (alpha[m] - beta);
    }
    for (std::size_t c = 0; c < n; ++c) p[c] = -q[c];
  };

  rep.reason = Termination::kMaxIterations;
  int it = 0;
  for (; it < cfg.max_iterations; ++it) {
    if (n == 0 || gnorm <= cfg.gradient_tolerance * (1.0 + std::abs(f))) {
      rep.reason = Termination::kConverged;
      break;
    }
    direction();
    double slope = Dot(g.data(), p.data(), static_cast<int>(n));
    if (!(slope < 0.0)) {
      memory.clear();
      direction();
      slope = Dot(g.data(), p.data(), static_cast<int>(n));
      if (!(slope < 0.0)) {
        rep.reason = Termination::kStalled;
        break;
      }
    }
    double step = cfg.initial_step;
    bool accepted = false;
    double f_trial = f;
    for (int b = 0; b < cfg.max_backtracks; ++b, step *= cfg.backtrack) {
      for (std::size_t c = 0; c < n; ++c) x_trial[c] = x[c] + step * p[c];
      f_trial = obj.Evaluate(x_trial, g_trial);
      if (std::isfinite(f_trial) && f_trial < f && f_trial <= f + cfg.armijo_c1 * step * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // Restore the preconditioner data of the current iterate.
      obj.Evaluate(x, g);
      obj.Accept();
      if (!memory.empty()) {
        memory.clear();
        continue;
      }
      rep.reason = Termination::kStalled;
      break;
    }
    obj.Accept();
    if (cfg.memory > 0) {
      Pair pr{std::vector<double>(n), std::vector<double>(n), 0.0};
      for (std::size_t c = 0; c < n; ++c) {
        pr.s[c] = x_trial[c] - x[c];
        pr.y[c] = g_trial[c] - g[c];
      }
      const double sy = Dot(pr.s.data(), pr.y.data(), static_cast<int>(n));
      if (sy > 0.0) {
        pr.rho = 1.0 / sy;
        memory.push_back(std::move(pr));
        if (static_cast<int>(memory.size()) > cfg.memory) memory.pop_front();
      }
    }
    x.swap(x_trial);
    g.swap(g_trial);
    f = f_trial;
    gnorm = norm(g);
    rep.energy_history.push_back(f);
  }
  if (it == cfg.max_iterations && gnorm <= cfg.gradient_tolerance * (1.0 + std::abs(f)))
    rep.reason = Termination::kConverged;
  rep.iterations = it;
  rep.gradient_norm = gnorm;
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  out.x = std::move(x);
  return out;
}

// Solves P v = rhs in place for one curve coordinate. P is the Hessian of
// scale * (1/(2 dt)) sum_k c_k |x_{k+1} - x_k|^2 + scale * (kappa/2) |x_M|^2
// over nodes 1..M with node 0 fixed. rhs has stride `stride`.
inline void SolveCurveStiffness(const double* c, int m, double kappa_dt, double scale, double* v, int stride,
                                std::vector<double>& work) {
  work.resize(2 * static_cast<std::size_t>(m));
  double* cp = work.data();
  double* dp = work.data() + m;
  const double f = scale;  // P = (scale / dt) (L_c + kappa dt e_M e_M^T)
  // Thomas algorithm; rows n = 0..m-1 stand for nodes 1..M.
  for (int r = 0; r < m; ++r) {
    const double diag = c[r] + (r + 1 < m ? c[r + 1] : kappa_dt);
    const double sub = r > 0 ? -c[r] : 0.0;
    const double sup = r + 1 < m ? -c[r + 1] : 0.0;
    const double denom = diag - (r > 0 ? sub * cp[r - 1] : 0.0);
    cp[r] = sup / denom;
    dp[r] = (v[r * stride] / f - (r > 0 ? sub * dp[r - 1] : 0.0)) / denom;
  }
  for (int r = m - 1; r >= 0; --r) {
    v[r * stride] = dp[r] - (r + 1 < m ? cp[r] * v[(r + 1) * stride] : 0.0);
  }
}

// ---------------------------------------------------------------------------
// Energy minimization over an ensemble

class EnsembleObjective : public Objective {
 public:
  explicit EnsembleObjective(const Ensemble& e) : work_(e) {}

  double Evaluate(std::span<const double> x, std::span<double> grad) override {
    work_.SetFreeNodes(x);
    EnergyEvaluation ev = EvaluateEnergy(work_, true);
    const int m = work_.steps(), d = work_.dim();
    const std::size_t per = static_cast<std::size_t>(m) * d;
    for (int i = 0; i < work_.size(); ++i)
      std::copy_n(ev.gradient.begin() + i * work_.stride() + d, per, grad.begin() + i * per);
    trial_stiffness_ = std::move(ev.stiffness);
    return ev.total;
  }

  void Accept() override { stiffness_ = trial_stiffness_; }

  void Precondition(std::span<double> v) const override {
    const int m = work_.steps(), d = work_.dim();
    const double dt = work_.dt();
    const std::size_t per = static_cast<std::size_t>(m) * d;
    std::vector<double> tmp;
    for (int i = 0; i < work_.size(); ++i) {
      const double kappa = work_.population_model(i).terminal.CurvatureBound();
      const double scale = 2.0 * work_.weight(i) / dt;
      for (int c = 0; c < d; ++c)
        SolveCurveStiffness(stiffness_.data() + static_cast<std::size_t>(i) * m, m, kappa * dt, scale,
                            v.data() + i * per + c, d, tmp);
    }
  }

  Ensemble& ensemble() { return work_; }

 private:
  Ensemble work_;
  std::vector<double> stiffness_, trial_stiffness_;
};

namespace detail {

inline std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

// Independent generator for (seed, stream).
inline std::mt19937_64 MakeRng(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(detail::SplitMix64(detail::SplitMix64(seed) ^ detail::SplitMix64(~stream)));
}

// Adds N(0, zeta^2) noise to every interior node (1..M-1). Particles of a
// population may copy the noise of a mirror source, negated; mirror[i] is
// the source particle index or -1.
inline void PerturbInterior(Ensemble& e, double zeta, std::mt19937_64& rng, const std::vector<int>& mirror = {}) {
  if (zeta == 0.0 || e.steps() < 2) return;
  const int m = e.steps(), d = e.dim();
  std::normal_distribution<double> normal(0.0, zeta);
  std::vector<double> noise(static_cast<std::size_t>(e.size()) * (m - 1) * d);
  for (int i = 0; i < e.size(); ++i) {
    if (!mirror.empty() && mirror[i] >= 0) continue;
    for (std::size_t c = 0; c < static_cast<std::size_t>(m - 1) * d; ++c)
      noise[i * static_cast<std::size_t>(m - 1) * d + c] = normal(rng);
  }
  std::vector<double> x(d);
  for (int i = 0; i < e.size(); ++i) {
    const int src = (!mirror.empty() && mirror[i] >= 0) ? mirror[i] : i;
    const double sign = src == i ? 1.0 : -1.0;
    for (int k = 1; k < m; ++k) {
      for (int c = 0; c < d; ++c)
        x[c] = e.node(i, k)[c] + sign * noise[(src * static_cast<std::size_t>(m - 1) + (k - 1)) * d + c];
      e.SetNode(i, k, x);
    }
  }
}

inline Ensemble StillEnsemble(const Ensemble& e) {
  Ensemble s = e;
  for (int i = 0; i < s.size(); ++i)
    for (int k = 1; k <= s.steps(); ++k)
      s.SetNode(i, k, std::span<const double>(e.node(i, 0), e.dim()));
  return s;
}

inline std::pair<Ensemble, SolveReport> MinimizeEnergy(const Ensemble& e, const SolveConfig& cfg,
                                                       const std::vector<int>& mirror = {}) {
  cfg.Validate();
  if (!e.kernel().is_even()) throw ValidationError("minimize_energy requires an even kernel");
  const auto started = std::chrono::steady_clock::now();

  std::vector<Ensemble> starts{e};
  if (cfg.still_start) starts.push_back(StillEnsemble(e));
  for (int s = 1; s < cfg.starts; ++s) {
    Ensemble p = e;
    auto rng = MakeRng(cfg.seed, 1000 + s);
    PerturbInterior(p, cfg.perturbation > 0.0 ? cfg.perturbation : 0.1 * e.dt(), rng, mirror);
    starts.push_back(std::move(p));
  }

  std::pair<Ensemble, SolveReport> best{e, SolveReport{}};
  bool have = false;
  std::vector<double> finals;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    EnsembleObjective obj(starts[s]);
    MinimizeResult r = MinimizeObjective(obj, starts[s].FreeNodes(), cfg);
    finals.push_back(r.report.final_energy());
    if (!have || r.report.final_energy() < best.second.final_energy()) {
      have = true;
      best.first = starts[s];
      best.first.SetFreeNodes(r.x);
      best.second = std::move(r.report);
      best.second.chosen_start = static_cast<int>(s);
    }
  }
  best.second.start_energies = std::move(finals);
  best.second.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return best;
}

}  // namespace velmfg
