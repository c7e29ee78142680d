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

// Reference scenarios and the lane segregation index.

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "velmfg/core.hpp"
#include "velmfg/ensemble.hpp"
#include "velmfg/scenario.hpp"

namespace velmfg {

// Two populations in the plane walking towards each other: A starts right of
// the origin with Psi = x_1, B left of it with Psi = -x_1.
inline Scenario HeadOnScenario(int per_population = 16, int steps = 32, double horizon = 1.0) {
  Scenario sc;
  sc.name = "head-on";
  sc.domain = Domain::Euclidean(2);
  sc.kernel = Kernel::SmoothedExponential(1.0, 0.5, 0.05);
  sc.lambda = 1.0;
  sc.horizon = horizon;
  sc.steps = steps;
  PopulationSpec a;
  a.name = "A";
  a.mass = 0.5;
  a.delta = 1.0;
  a.terminal = TerminalCost::Linear({1.0, 0.0});
  a.sampler.kind = SamplerKind::kUniformBox;
  a.sampler.lo = {0.5, -0.5};
  a.sampler.hi = {1.5, 0.5};
  a.count = per_population;
  PopulationSpec b = a;
  b.name = "B";
  b.terminal = TerminalCost::Linear({-1.0, 0.0});
  b.sampler.lo = {-1.5, -0.5};
  b.sampler.hi = {-0.5, 0.5};
  sc.populations = {a, b};
  sc.solver.perturbation = 0.02;
  return sc;
}

// 1D: population B is the mirror image of A, so the game is invariant under
// x -> -x with the populations swapped.
inline Scenario MirrorScenario(int per_population = 8, int steps = 32) {
  Scenario sc;
  sc.name = "mirror-1d";
  sc.domain = Domain::Euclidean(1);
  sc.kernel = Kernel::SmoothedExponential(1.0, 0.5, 0.05);
  sc.lambda = 1.0;
  sc.horizon = 1.0;
  sc.steps = steps;
  PopulationSpec a;
  a.name = "right";
  a.mass = 0.5;
  a.terminal = TerminalCost::Linear({1.0});
  a.sampler.kind = SamplerKind::kUniformBox;
  a.sampler.lo = {0.25};
  a.sampler.hi = {1.25};
  a.count = per_population;
  PopulationSpec b;
  b.name = "left";
  b.mass = 0.5;
  b.terminal = TerminalCost::Linear({-1.0});
  b.sampler.kind = SamplerKind::kMirror;
  b.sampler.source = 0;
  b.count = per_population;
  sc.populations = {a, b};
  sc.solver.perturbation = 0.02;
  return sc;
}

// One population on the unit circle pulled towards a periodic well.
inline Scenario TorusScenario(int count = 2000, int steps = 16) {
  Scenario sc;
  sc.name = "torus-1d";
  sc.domain = Domain::Torus({1.0});
  sc.kernel = Kernel::SmoothedExponential(1.0, 0.1, 0.01);
  sc.lambda = 1.0;
  sc.horizon = 1.0;
  sc.steps = steps;
  PopulationSpec p;
  p.name = "crowd";
  p.mass = 1.0;
  p.terminal = TerminalCost::Well({0.6}, 0.3);
  p.sampler.kind = SamplerKind::kGaussian;
  p.sampler.mean = {0.4};
  p.sampler.stddev = {0.08};
  p.sampler.stratified = true;
  p.count = count;
  sc.populations = {p};
  sc.solver.gradient_tolerance = 1e-6;
  return sc;
}

// Two populations mixed in the strip [-3,3] x [0,1] heading in opposite
// directions. confinement > 0 adds (kappa_y / 2) (y - 1/2)^2 to both costs.
inline Scenario LaneScenario(double eps = 0.1, int per_population = 120, double confinement = 0.0) {
  if (eps != 0.1 && eps != 0.2) throw ValidationError("lane preset supports eps in {0.1, 0.2}");
  Scenario sc;
  sc.name = "lanes";
  sc.domain = Domain::Euclidean(2);
  sc.kernel = Kernel::SmoothedExponential(1.0, eps, 0.1 * eps);
  sc.lambda = 40.0;
  sc.horizon = 1.0;
  sc.steps = 32;
  PopulationSpec a;
  a.name = "east";
  a.mass = 1.0;
  a.terminal = TerminalCost::Linear({1.0, 0.0});
  a.sampler.kind = SamplerKind::kUniformBox;
  a.sampler.lo = {-3.0, 0.0};
  a.sampler.hi = {3.0, 1.0};
  a.count = per_population;
  PopulationSpec b = a;
  b.name = "west";
  b.terminal = TerminalCost::Linear({-1.0, 0.0});
  if (confinement > 0.0) {
    a.terminal.Add(QuadraticWell{{0.0, 0.5}, confinement, {0.0, 1.0}});
    b.terminal.Add(QuadraticWell{{0.0, 0.5}, confinement, {0.0, 1.0}});
  }
  sc.populations = {a, b};
  sc.solver.perturbation = 0.01;
  sc.solver.gradient_tolerance = 1e-6;
  return sc;
}

// Mass-weighted mean over particles of (same - other) / (same + other)
// neighbour mass within radius r at node time k; a particle is not its own
// neighbour and particles without neighbours contribute 0.
inline double SegregationIndex(const Ensemble& e, int k, double r) {
  if (e.model().populations.size() < 2) throw ValidationError("segregation index needs at least two populations");
  if (!(r > 0.0)) throw ValidationError("segregation radius must be > 0");
  if (k < 0 || k > e.steps()) throw Error("segregation index: time index out of range");
  const int n = e.size(), d = e.dim();
  std::vector<double> z(d);
  CompensatedSum total, mass;
  for (int i = 0; i < n; ++i) {
    double same = 0.0, other = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      e.domain().Displacement(e.node(i, k), e.node(j, k), z.data());
      if (SquaredNorm(z.data(), d) > r * r) continue;
      (e.population(j) == e.population(i) ? same : other) += e.weight(j);
    }
    mass.Add(e.weight(i));
    if (same + other > 0.0) total.Add(e.weight(i) * (same - other) / (same + other));
  }
  return total.value() / mass.value();
}

inline std::vector<double> SegregationSeries(const Ensemble& e, double r) {
  std::vector<double> s(e.steps() + 1);
  for (int k = 0; k <= e.steps(); ++k) s[k] = SegregationIndex(e, k, r);
  return s;
}

}  // namespace velmfg
