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

// Macroscopic fields induced by an ensemble on interval k:
//   a(x)  = sum_j w_j eta(x - x_j)
//   au(x) = sum_j w_j v_j eta(x - x_j),        u = au / a
//   sigma = sum_j w_j |v_j - u|^2 eta(x - x_j)
// with v_j the interval velocity and x_j the position at a fraction theta of
// the interval (theta = 0 is the left node). Also the velocity moments and
// the Eulerian kinetic-plus-alignment functional on a periodic 1D grid.

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "velmfg/core.hpp"
#include "velmfg/ensemble.hpp"
#include "velmfg/parallel.hpp"

namespace velmfg {

struct MomentSeries {
  std::vector<double> m1, m2;  // per interval
};

inline MomentSeries Moments(const Ensemble& e) {
  const int m = e.steps(), d = e.dim();
  MomentSeries out{std::vector<double>(m, 0.0), std::vector<double>(m, 0.0)};
  const std::vector<double> vel = detail::AllVelocities(e);
  for (int k = 0; k < m; ++k) {
    CompensatedSum s1, s2;
    for (int i = 0; i < e.size(); ++i) {
      const double sq = SquaredNorm(vel.data() + (static_cast<std::size_t>(i) * m + k) * d, d);
      s1.Add(e.weight(i) * std::sqrt(sq));
      s2.Add(e.weight(i) * sq);
    }
    out.m1[k] = s1.value();
    out.m2[k] = s2.value();
  }
  return out;
}

// Fields and their spatial derivatives at one point. Matrices are row-major
// d x d with entry [alpha * d + beta] = d_beta (.)_alpha.
struct MacroSample {
  int k = 0;
  Point x;
  double a = 0.0;
  Point au, u;
  double sigma = 0.0;
  Point grad_a;
  std::vector<double> grad_au, grad_u;
  Point grad_sigma;
};

// Positions and velocities of every particle on interval k at fraction theta.
struct IntervalSnapshot {
  int k = 0;
  int dim = 1;
  std::vector<double> x, v;  // N * d each
};

inline IntervalSnapshot Snapshot(const Ensemble& e, int k, double theta = 0.0) {
  if (k < 0 || k >= e.steps()) throw Error("interval index out of range");
  const int d = e.dim();
  IntervalSnapshot s{k, d, std::vector<double>(static_cast<std::size_t>(e.size()) * d),
                     std::vector<double>(static_cast<std::size_t>(e.size()) * d)};
  for (int i = 0; i < e.size(); ++i) {
    double* v = s.v.data() + static_cast<std::size_t>(i) * d;
    e.domain().Displacement(e.node(i, k + 1), e.node(i, k), v);
    for (int c = 0; c < d; ++c) {
      s.x[i * d + c] = e.node(i, k)[c] + theta * v[c];
      v[c] /= e.dt();
    }
  }
  return s;
}

inline MacroSample MacroEvalSnapshot(const Ensemble& e, const IntervalSnapshot& s, std::span<const double> x) {
  const int d = e.dim(), n = e.size();
  if (static_cast<int>(x.size()) != d) throw Error("macro_eval: dimension mismatch");
  MacroSample out;
  out.k = s.k;
  out.x.assign(x.begin(), x.end());
  out.au.assign(d, 0.0);
  out.u.assign(d, 0.0);
  out.grad_a.assign(d, 0.0);
  out.grad_au.assign(static_cast<std::size_t>(d) * d, 0.0);
  out.grad_u.assign(static_cast<std::size_t>(d) * d, 0.0);
  out.grad_sigma.assign(d, 0.0);
  std::vector<double> eta(n), grad(static_cast<std::size_t>(n) * d), z(d);
  for (int j = 0; j < n; ++j) {
    e.domain().Displacement(x.data(), s.x.data() + static_cast<std::size_t>(j) * d, z.data());
    eta[j] = e.kernel().ValueGrad(z.data(), d, grad.data() + static_cast<std::size_t>(j) * d);
  }
  for (int j = 0; j < n; ++j) {
    const double w = e.weight(j);
    const double* vj = s.v.data() + static_cast<std::size_t>(j) * d;
    const double* gj = grad.data() + static_cast<std::size_t>(j) * d;
    out.a += w * eta[j];
    for (int al = 0; al < d; ++al) {
      out.au[al] += w * vj[al] * eta[j];
      out.grad_a[al] += w * gj[al];
      for (int be = 0; be < d; ++be) out.grad_au[al * d + be] += w * vj[al] * gj[be];
    }
  }
  for (int al = 0; al < d; ++al) out.u[al] = out.au[al] / out.a;
  for (int al = 0; al < d; ++al)
    for (int be = 0; be < d; ++be)
      out.grad_u[al * d + be] = (out.grad_au[al * d + be] - out.u[al] * out.grad_a[be]) / out.a;
  // Second pass on the centred velocities.
  for (int j = 0; j < n; ++j) {
    const double* vj = s.v.data() + static_cast<std::size_t>(j) * d;
    double sq = 0.0;
    for (int c = 0; c < d; ++c) sq += (vj[c] - out.u[c]) * (vj[c] - out.u[c]);
    out.sigma += e.weight(j) * sq * eta[j];
    for (int c = 0; c < d; ++c) out.grad_sigma[c] += e.weight(j) * sq * grad[j * d + c];
  }
  return out;
}

inline MacroSample MacroEval(const Ensemble& e, int k, std::span<const double> x, double theta = 0.0) {
  return MacroEvalSnapshot(e, Snapshot(e, k, theta), x);
}

// Direct sum_j w_j |v - v_j|^2 eta against a |v - u|^2 + sigma.
struct Decomposition {
  double lhs = 0.0, rhs = 0.0;
};

inline Decomposition DecompositionCheck(const Ensemble& e, int k, std::span<const double> x, std::span<const double> v,
                                        double theta = 0.0) {
  const int d = e.dim();
  const IntervalSnapshot s = Snapshot(e, k, theta);
  const MacroSample f = MacroEvalSnapshot(e, s, x);
  Decomposition out;
  std::vector<double> z(d);
  for (int j = 0; j < e.size(); ++j) {
    e.domain().Displacement(x.data(), s.x.data() + static_cast<std::size_t>(j) * d, z.data());
    double sq = 0.0;
    for (int c = 0; c < d; ++c) sq += (v[c] - s.v[j * d + c]) * (v[c] - s.v[j * d + c]);
    out.lhs += e.weight(j) * sq * e.kernel().Value(z.data(), d);
  }
  double vu = 0.0;
  for (int c = 0; c < d; ++c) vu += (v[c] - f.u[c]) * (v[c] - f.u[c]);
  out.rhs = f.a * vu + f.sigma;
  return out;
}

// (lambda/2) grad_x [a |v - u|^2 + sigma] assembled from the fields.
inline Point AlignmentForceFromFields(const MacroSample& f, std::span<const double> v, double lambda) {
  const int d = static_cast<int>(v.size());
  Point out(d);
  double vu = 0.0;
  for (int c = 0; c < d; ++c) vu += (v[c] - f.u[c]) * (v[c] - f.u[c]);
  for (int be = 0; be < d; ++be) {
    double jt = 0.0;  // ((grad u)^T (u - v))_beta
    for (int al = 0; al < d; ++al) jt += f.grad_u[al * d + be] * (f.u[al] - v[al]);
    out[be] = 0.5 * lambda * (f.grad_a[be] * vu + 2.0 * f.a * jt + f.grad_sigma[be]);
  }
  return out;
}

// (lambda/2) sum_j w_j |v - v_j|^2 grad eta(x - x_j), the same force summed
// directly over particles.
inline Point AlignmentForceDirect(const Ensemble& e, const IntervalSnapshot& s, std::span<const double> x,
                                  std::span<const double> v, double lambda) {
  const int d = e.dim();
  Point out(d, 0.0), z(d), g(d);
  for (int j = 0; j < e.size(); ++j) {
    e.domain().Displacement(x.data(), s.x.data() + static_cast<std::size_t>(j) * d, z.data());
    e.kernel().ValueGrad(z.data(), d, g.data());
    double sq = 0.0;
    for (int c = 0; c < d; ++c) sq += (v[c] - s.v[j * d + c]) * (v[c] - s.v[j * d + c]);
    for (int c = 0; c < d; ++c) out[c] += 0.5 * lambda * e.weight(j) * sq * g[c];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Periodic 1D grids

struct PeriodicGrid {
  int cells = 256;
  double length = 1.0;
  double spacing() const { return length / cells; }
  double center(int m) const { return (m + 0.5) * spacing(); }
};

// Mass-preserving kernel density estimate on a periodic 1D grid. Each
// particle deposits w_j * value_j with a wrapped Gaussian of std `bandwidth`,
// renormalized so that its discrete integral is exactly w_j * value_j.
inline std::vector<double> ProjectDensity(const PeriodicGrid& g, std::span<const double> x, std::span<const double> w,
                                          std::span<const double> value, double bandwidth) {
  const int nx = g.cells;
  const double h = g.spacing();
  const int reach = std::min(nx / 2, static_cast<int>(std::ceil(6.0 * bandwidth / h)) + 1);
  std::vector<double> out(nx, 0.0), bump(2 * reach + 1);
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double pos = x[j] - g.length * std::floor(x[j] / g.length);
    const int base = static_cast<int>(std::floor(pos / h - 0.5));
    double total = 0.0;
    for (int o = -reach; o <= reach; ++o) {
      const double dx = ((base + o) + 0.5) * h - pos;
      bump[o + reach] = std::exp(-0.5 * dx * dx / (bandwidth * bandwidth));
      total += bump[o + reach];
    }
    const double scale = w[j] * (value.empty() ? 1.0 : value[j]) / (total * h);
    for (int o = -reach; o <= reach; ++o) {
      int cell = (base + o) % nx;
      if (cell < 0) cell += nx;
      out[cell] += scale * bump[o + reach];
    }
  }
  return out;
}

// Circular Riemann-sum convolution (eta * f)(x_m) = sum_n eta(x_m - x_n) f_n h
// with the kernel evaluated at the wrapped offset.
inline std::vector<double> ConvolvePeriodic(const PeriodicGrid& g, std::span<const double> f, const Kernel& kernel) {
  const int nx = g.cells;
  const double h = g.spacing();
  std::vector<double> samples(nx);
  const Domain torus = Domain::Torus({g.length});
  const double origin = 0.0;
  for (int o = 0; o < nx; ++o) {
    const double z = o * h;
    double dz;
    torus.Displacement(&z, &origin, &dz);
    samples[o] = kernel.Value(&dz, 1) * h;
  }
  std::vector<double> out(nx, 0.0);
  ParallelFor(nx, [&](int m) {
    double s = 0.0;
    for (int n = 0; n < nx; ++n) {
      int o = m - n;
      if (o < 0) o += nx;
      s += samples[o] * f[n];
    }
    out[m] = s;
  });
  return out;
}

// sum over slabs of dt * h * sum_m [ (delta/2)|w|^2/rho + lambda (|w|^2/rho)(eta*rho)
//                                    - lambda w (eta*w) ]
// rho and w are slab-major, slabs * cells. 0/0 counts as 0.
inline double EulerianEnergy(const PeriodicGrid& g, double dt, std::span<const double> rho, std::span<const double> w,
                             const Kernel& kernel, double delta, double lambda) {
  const int nx = g.cells;
  if (rho.size() != w.size() || rho.size() % nx != 0) throw Error("eulerian_energy: grid size mismatch");
  const int slabs = static_cast<int>(rho.size() / nx);
  const double h = g.spacing();
  CompensatedSum total;
  for (int k = 0; k < slabs; ++k) {
    std::span<const double> r = rho.subspan(static_cast<std::size_t>(k) * nx, nx);
    std::span<const double> m = w.subspan(static_cast<std::size_t>(k) * nx, nx);
    for (int c = 0; c < nx; ++c) {
      if (r[c] < 0.0) throw Error("eulerian_energy: negative density");
      if (r[c] == 0.0 && m[c] != 0.0) throw Error("eulerian_energy: momentum without mass");
    }
    const std::vector<double> er = ConvolvePeriodic(g, r, kernel);
    const std::vector<double> em = ConvolvePeriodic(g, m, kernel);
    for (int c = 0; c < nx; ++c) {
      const double e2 = r[c] > 0.0 ? m[c] * m[c] / r[c] : 0.0;
      total.Add(dt * h * (0.5 * delta * e2 + lambda * e2 * er[c] - lambda * m[c] * em[c]));
    }
  }
  return total.value();
}

}  // namespace velmfg
