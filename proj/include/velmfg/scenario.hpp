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

// Problem instances: the model, per-population initial samplers, solver and
// diagnostics settings, and the seed. Also builds the initial ensemble.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/special_functions/erf.hpp>

#include "velmfg/core.hpp"
#include "velmfg/ensemble.hpp"
#include "velmfg/solver.hpp"

namespace velmfg {

enum class SamplerKind { kUniformBox, kGaussian, kPoints, kMirror };

inline const char* SamplerKindName(SamplerKind k) {
  switch (k) {
    case SamplerKind::kUniformBox:
      return "uniform-box";
    case SamplerKind::kGaussian:
      return "gaussian";
    case SamplerKind::kPoints:
      return "points";
    case SamplerKind::kMirror:
      return "mirror";
  }
  return "unknown";
}

// Stratified samplers place one sample per quantile cell, at the cell
// centre, per coordinate; in d > 1 the coordinates are matched by random
// permutations (Latin hypercube).
struct SamplerSpec {
  SamplerKind kind = SamplerKind::kUniformBox;
  Point lo, hi;                 // uniform-box
  Point mean, stddev;           // gaussian
  std::vector<Point> points;    // points
  int source = -1;              // mirror: earlier population, negated
  bool stratified = false;
  bool operator==(const SamplerSpec&) const = default;
};

struct PopulationSpec {
  std::string name;
  double mass = 1.0;
  double delta = 1.0;
  TerminalCost terminal;
  SamplerSpec sampler;
  int count = 1;
  bool operator==(const PopulationSpec&) const = default;
};

struct DiagnosticsConfig {
  int audit_samples = 1000;
  int best_response_starts = 3;
  double best_response_perturbation = 0.05;
  int exploitability_subset = 0;    // 0: every particle
  int uniqueness_starts = 10;
  double monokinetic_radius = 0.0;  // 0: kernel length scale
  double segregation_radius = 0.0;  // 0: kernel length scale
  bool operator==(const DiagnosticsConfig&) const = default;
};

struct EulerianConfig {
  int cells = 256;
  double damping = 0.5;
  double tolerance = 1e-6;
  int max_iterations = 500;
  double bandwidth_cells = 2.0;     // KDE bandwidth in grid spacings
  bool operator==(const EulerianConfig&) const = default;
};

struct Scenario {
  std::string name = "scenario";
  Domain domain = Domain::Euclidean(1);
  Kernel kernel = Kernel::SmoothedExponential(1.0, 1.0, 0.1);
  double lambda = 1.0;
  double horizon = 1.0;
  int steps = 16;
  std::vector<PopulationSpec> populations;
  SolveConfig solver;
  DiagnosticsConfig diagnostics;
  EulerianConfig eulerian;
  std::uint64_t seed = 1;

  Model model() const {
    Model m;
    m.domain = domain;
    m.kernel = kernel;
    m.lambda = lambda;
    m.horizon = horizon;
    m.steps = steps;
    for (const auto& p : populations) m.populations.push_back(PopulationModel{p.mass, p.delta, p.terminal});
    m.Finalize();
    return m;
  }

  int particle_count() const {
    int n = 0;
    for (const auto& p : populations) n += p.count;
    return n;
  }

  double monokinetic_radius() const {
    return diagnostics.monokinetic_radius > 0.0 ? diagnostics.monokinetic_radius : kernel.length;
  }
  double segregation_radius() const {
    return diagnostics.segregation_radius > 0.0 ? diagnostics.segregation_radius : kernel.length;
  }

  void Validate() const {
    (void)model();
    solver.Validate();
    const int d = domain.dim();
    for (std::size_t q = 0; q < populations.size(); ++q) {
      const PopulationSpec& p = populations[q];
      const std::string where = "population '" + p.name + "': ";
      if (p.count < 1) throw ValidationError(where + "count must be >= 1");
      const SamplerSpec& s = p.sampler;
      switch (s.kind) {
        case SamplerKind::kUniformBox:
          if (static_cast<int>(s.lo.size()) != d || static_cast<int>(s.hi.size()) != d)
            throw ValidationError(where + "uniform-box bounds must have the domain dimension");
          for (int c = 0; c < d; ++c) {
            if (!(s.lo[c] <= s.hi[c])) throw ValidationError(where + "uniform-box needs lo <= hi");
            if (domain.is_torus() && s.hi[c] - s.lo[c] > domain.periods()[c])
              throw ValidationError(where + "uniform-box wider than the torus period");
          }
          break;
        case SamplerKind::kGaussian:
          if (static_cast<int>(s.mean.size()) != d || static_cast<int>(s.stddev.size()) != d)
            throw ValidationError(where + "gaussian mean/stddev must have the domain dimension");
          for (int c = 0; c < d; ++c) {
            if (!(s.stddev[c] >= 0.0)) throw ValidationError(where + "gaussian stddev must be >= 0");
            if (!std::isfinite(s.mean[c])) throw ValidationError(where + "gaussian mean must be finite");
          }
          break;
        case SamplerKind::kPoints:
          if (static_cast<int>(s.points.size()) != p.count)
            throw ValidationError(where + "points sampler needs exactly count points");
          for (const auto& x : s.points) {
            if (static_cast<int>(x.size()) != d) throw ValidationError(where + "point dimension mismatch");
            for (double v : x)
              if (!std::isfinite(v)) throw ValidationError(where + "points must be finite");
          }
          break;
        case SamplerKind::kMirror:
          if (s.source < 0 || s.source >= static_cast<int>(q))
            throw ValidationError(where + "mirror source must be an earlier population");
          if (populations[s.source].count != p.count)
            throw ValidationError(where + "mirror population must match the source count");
          break;
      }
    }
    if (diagnostics.audit_samples < 1) throw ValidationError("diagnostics audit_samples must be >= 1");
    if (diagnostics.best_response_starts < 1) throw ValidationError("diagnostics best_response_starts must be >= 1");
    if (diagnostics.uniqueness_starts < 2) throw ValidationError("diagnostics uniqueness_starts must be >= 2");
    if (eulerian.cells < 8) throw ValidationError("eulerian cells must be >= 8");
    if (!(eulerian.damping > 0.0 && eulerian.damping <= 1.0))
      throw ValidationError("eulerian damping must lie in (0,1]");
    if (!(eulerian.tolerance > 0.0)) throw ValidationError("eulerian tolerance must be > 0");
    if (!(eulerian.bandwidth_cells > 0.0)) throw ValidationError("eulerian bandwidth_cells must be > 0");
  }

  bool operator==(const Scenario&) const = default;
};

// ---------------------------------------------------------------------------
// Sampling

inline double StandardNormalQuantile(double u) {
  return std::sqrt(2.0) * boost::math::erf_inv(2.0 * u - 1.0);
}

// Starts of one population, count * d values. Mirror populations are resolved
// by the caller from their source.
inline std::vector<double> SampleStarts(const SamplerSpec& s, int count, int d, std::mt19937_64& rng) {
  std::vector<double> x(static_cast<std::size_t>(count) * d);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<int> perm(count);
  auto strata = [&](int c, auto&& quantile) {
    std::iota(perm.begin(), perm.end(), 0);
    if (c > 0) std::shuffle(perm.begin(), perm.end(), rng);
    for (int r = 0; r < count; ++r) x[r * d + c] = quantile((perm[r] + 0.5) / count);
  };
  switch (s.kind) {
    case SamplerKind::kUniformBox:
      for (int c = 0; c < d; ++c) {
        if (s.stratified) {
          strata(c, [&](double u) { return s.lo[c] + u * (s.hi[c] - s.lo[c]); });
        }
      }
      if (!s.stratified)
        for (int r = 0; r < count; ++r)
          for (int c = 0; c < d; ++c) x[r * d + c] = s.lo[c] + uni(rng) * (s.hi[c] - s.lo[c]);
      break;
    case SamplerKind::kGaussian:
      if (s.stratified) {
        for (int c = 0; c < d; ++c)
          strata(c, [&](double u) { return s.mean[c] + s.stddev[c] * StandardNormalQuantile(u); });
      } else {
        for (int r = 0; r < count; ++r)
          for (int c = 0; c < d; ++c) x[r * d + c] = s.mean[c] + s.stddev[c] * normal(rng);
      }
      break;
    case SamplerKind::kPoints:
      for (int r = 0; r < count; ++r)
        for (int c = 0; c < d; ++c) x[r * d + c] = s.points[r][c];
      break;
    case SamplerKind::kMirror:
      throw Error("mirror sampler has no samples of its own");
  }
  return x;
}

// For every particle, the index of the particle it mirrors, or -1.
inline std::vector<int> MirrorMap(const Scenario& sc) {
  std::vector<int> offset(sc.populations.size() + 1, 0);
  for (std::size_t q = 0; q < sc.populations.size(); ++q) offset[q + 1] = offset[q] + sc.populations[q].count;
  std::vector<int> map(offset.back(), -1);
  for (std::size_t q = 0; q < sc.populations.size(); ++q) {
    const SamplerSpec& s = sc.populations[q].sampler;
    if (s.kind != SamplerKind::kMirror) continue;
    for (int r = 0; r < sc.populations[q].count; ++r) map[offset[q] + r] = offset[s.source] + r;
  }
  return map;
}

// Starts from the samplers, interior nodes on the single-agent straight line
// with velocity -grad Psi(x0)/delta (speed capped), then interior noise.
inline Ensemble InitializeEnsemble(const Scenario& sc, std::uint64_t seed) {
  sc.Validate();
  Model model = sc.model();
  const int d = sc.domain.dim(), m = sc.steps;
  const std::size_t stride = static_cast<std::size_t>(m + 1) * d;
  std::vector<std::vector<double>> starts(sc.populations.size());
  std::vector<int> labels;
  std::vector<double> weights;
  for (std::size_t q = 0; q < sc.populations.size(); ++q) {
    const PopulationSpec& p = sc.populations[q];
    if (p.sampler.kind == SamplerKind::kMirror) {
      starts[q] = starts[p.sampler.source];
      for (double& v : starts[q]) v = -v;
    } else {
      auto rng = MakeRng(seed, q);
      starts[q] = SampleStarts(p.sampler, p.count, d, rng);
    }
    for (int r = 0; r < p.count; ++r) {
      labels.push_back(static_cast<int>(q));
      weights.push_back(p.mass / p.count);
    }
  }
  std::vector<double> nodes;
  nodes.reserve(labels.size() * stride);
  std::vector<double> grad(d), vel(d);
  for (std::size_t q = 0; q < sc.populations.size(); ++q) {
    const PopulationModel& pm = model.populations[q];
    for (int r = 0; r < sc.populations[q].count; ++r) {
      const double* x0 = starts[q].data() + static_cast<std::size_t>(r) * d;
      pm.terminal.ValueGrad(x0, d, grad.data());
      for (int c = 0; c < d; ++c) vel[c] = -grad[c] / pm.delta;
      // On a torus a step must stay below half a period.
      const double cap = sc.domain.is_torus()
                             ? std::min(sc.solver.speed_cap, 0.4 * sc.domain.min_period() / model.dt())
                             : sc.solver.speed_cap;
      const double speed = std::sqrt(SquaredNorm(vel.data(), d));
      if (speed > cap)
        for (int c = 0; c < d; ++c) vel[c] *= cap / speed;
      for (int k = 0; k <= m; ++k) {
        const double t = k * model.dt();
        for (int c = 0; c < d; ++c) nodes.push_back(k == 0 ? x0[c] : x0[c] + t * vel[c]);
      }
    }
  }
  Ensemble e(std::move(model), std::move(labels), std::move(weights), std::move(nodes));
  auto rng = MakeRng(seed, 0xC0FFEE);
  PerturbInterior(e, sc.solver.perturbation, rng, MirrorMap(sc));
  return e;
}

}  // namespace velmfg
