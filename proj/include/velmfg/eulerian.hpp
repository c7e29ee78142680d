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

// The coupled Hamilton-Jacobi / continuity system on a periodic 1D grid.
//
//   -d_t phi + H(x, d_x phi) = 0,   phi(T) = Psi,
//   H(x, p) = |-p + lambda au|^2 / (2 (delta + lambda a)) - (lambda/2) s2,
//   d_t rho + d_x(rho v) = 0,       rho(0) = m0,
//   v = (-d_x phi + lambda au) / (delta + lambda a),
//   a = eta * rho,  au = eta * (rho v),  s2 = eta * (rho v^2).
//
// Time is cut into slabs matching the ensemble intervals; the fields a, au,
// s2 and v are constant per slab, phi and rho live on the slab boundaries.
// Layouts are slab-major: fields slabs * cells, phi and rho (slabs + 1) * cells.

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "velmfg/core.hpp"
#include "velmfg/ensemble.hpp"
#include "velmfg/macro.hpp"

namespace velmfg {

inline constexpr int kMaxSubstepLevels = 10;

struct EulerProblem {
  PeriodicGrid grid;
  int slabs = 16;
  double dt = 1.0 / 16;
  double delta = 1.0;
  double lambda = 1.0;
  Kernel kernel;
  TerminalCost terminal;     // bound to the torus
  std::vector<double> m0;    // cells, sum m0 h = mass

  void Validate() const {
    if (grid.cells < 8) throw ValidationError("eulerian grid needs at least 8 cells");
    if (!(grid.length > 0.0)) throw ValidationError("eulerian grid length must be > 0");
    if (slabs < 1 || !(dt > 0.0)) throw ValidationError("eulerian time grid is empty");
    if (static_cast<int>(m0.size()) != grid.cells) throw ValidationError("eulerian m0 size mismatch");
    for (double r : m0)
      if (!(r >= 0.0)) throw ValidationError("eulerian m0 must be >= 0");
  }
};

struct EulerianState {
  PeriodicGrid grid;
  int slabs = 0;
  std::vector<double> phi, rho;        // (slabs + 1) * cells
  std::vector<double> v, a, au, s2;    // slabs * cells
};

namespace detail {

inline double MassOf(std::span<const double> rho, double h) {
  CompensatedSum s;
  for (double r : rho) s.Add(r * h);
  return s.value();
}

}  // namespace detail

// One backward slab from phi_next with the numerical Hamiltonian
// H((p- + p+)/2) - (alpha/2)(p+ - p-); returns false if the CFL bound fails
// with `substeps` substeps.
inline bool HjSlab(const EulerProblem& pb, std::span<const double> a, std::span<const double> au,
                   std::span<const double> s2, std::span<const double> phi_next, int substeps,
                   std::span<double> phi_out) {
  const int nx = pb.grid.cells;
  const double h = pb.grid.spacing();
  const double tau = pb.dt / substeps;
  std::vector<double> cur(phi_next.begin(), phi_next.end()), nxt(nx), pm(nx + 1);
  for (int s = 0; s < substeps; ++s) {
    // pm[m] = (phi_m - phi_{m-1}) / h, periodic.
    for (int m = 0; m < nx; ++m) pm[m] = (cur[m] - cur[(m + nx - 1) % nx]) / h;
    pm[nx] = pm[0];
    double alpha = 0.0;
    for (int m = 0; m < nx; ++m) {
      const double c = pb.delta + pb.lambda * a[m];
      const double lo = std::min(pm[m], pm[m + 1]) - pb.lambda * au[m];
      const double hi = std::max(pm[m], pm[m + 1]) - pb.lambda * au[m];
      alpha = std::max(alpha, std::max(std::abs(lo), std::abs(hi)) / c);
    }
    if (alpha * tau > h) return false;
    for (int m = 0; m < nx; ++m) {
      const double c = pb.delta + pb.lambda * a[m];
      const double pbar = 0.5 * (pm[m] + pm[m + 1]);
      const double q = -pbar + pb.lambda * au[m];
      const double ham = q * q / (2.0 * c) - 0.5 * pb.lambda * s2[m] - 0.5 * alpha * (pm[m + 1] - pm[m]);
      nxt[m] = cur[m] - tau * ham;
    }
    cur.swap(nxt);
  }
  std::copy(cur.begin(), cur.end(), phi_out.begin());
  return true;
}

inline std::vector<double> HjBackward(const EulerProblem& pb, std::span<const double> a, std::span<const double> au,
                                      std::span<const double> s2) {
  const int nx = pb.grid.cells;
  const std::size_t fsize = static_cast<std::size_t>(pb.slabs) * nx;
  if (a.size() != fsize || au.size() != fsize || s2.size() != fsize) throw Error("hj_backward: field size mismatch");
  for (double x : a)
    if (!(x > 0.0)) throw Error("hj_backward: a must be > 0");
  std::vector<double> phi(static_cast<std::size_t>(pb.slabs + 1) * nx);
  for (int m = 0; m < nx; ++m) {
    const double x = pb.grid.center(m);
    phi[static_cast<std::size_t>(pb.slabs) * nx + m] = pb.terminal.Value(&x, 1);
  }
  for (int k = pb.slabs - 1; k >= 0; --k) {
    const std::size_t off = static_cast<std::size_t>(k) * nx;
    std::span<const double> next(phi.data() + off + nx, nx);
    std::span<double> out(phi.data() + off, nx);
    bool ok = false;
    for (int level = 0; level <= kMaxSubstepLevels && !ok; ++level)
      ok = HjSlab(pb, a.subspan(off, nx), au.subspan(off, nx), s2.subspan(off, nx), next, 1 << level, out);
    if (!ok) throw Error("hj_backward: CFL violation after maximal substep refinement in slab " + std::to_string(k));
  }
  return phi;
}

// Optimal feedback velocity per slab from the slab-averaged phi.
inline std::vector<double> FeedbackVelocity(const EulerProblem& pb, std::span<const double> phi,
                                            std::span<const double> a, std::span<const double> au) {
  const int nx = pb.grid.cells;
  const double h = pb.grid.spacing();
  std::vector<double> v(static_cast<std::size_t>(pb.slabs) * nx);
  for (int k = 0; k < pb.slabs; ++k) {
    const double* p0 = phi.data() + static_cast<std::size_t>(k) * nx;
    const double* p1 = p0 + nx;
    for (int m = 0; m < nx; ++m) {
      const int l = (m + nx - 1) % nx, r = (m + 1) % nx;
      const double dphi = 0.5 * ((p0[r] + p1[r]) - (p0[l] + p1[l])) / (2.0 * h);
      const std::size_t idx = static_cast<std::size_t>(k) * nx + m;
      v[idx] = (-dphi + pb.lambda * au[idx]) / (pb.delta + pb.lambda * a[idx]);
    }
  }
  return v;
}

// Conservative upwind update with face velocity (v_m + v_{m+1})/2. Substeps
// keep every cell's outflow fraction <= 1, which preserves rho >= 0.
inline std::vector<double> CeForward(const PeriodicGrid& grid, int slabs, double dt, std::span<const double> v,
                                     std::span<const double> m0) {
  const int nx = grid.cells;
  const double h = grid.spacing();
  if (v.size() != static_cast<std::size_t>(slabs) * nx || static_cast<int>(m0.size()) != nx)
    throw Error("ce_forward: size mismatch");
  std::vector<double> rho(static_cast<std::size_t>(slabs + 1) * nx);
  std::copy(m0.begin(), m0.end(), rho.begin());
  std::vector<double> face(nx), flux(nx), cur(nx);
  for (int k = 0; k < slabs; ++k) {
    const double* vk = v.data() + static_cast<std::size_t>(k) * nx;
    for (int m = 0; m < nx; ++m) face[m] = 0.5 * (vk[m] + vk[(m + 1) % nx]);  // face m+1/2
    double out_speed = 0.0;
    for (int m = 0; m < nx; ++m)
      out_speed = std::max(out_speed, std::max(face[m], 0.0) + std::max(-face[(m + nx - 1) % nx], 0.0));
    int substeps = 1, level = 0;
    while (out_speed * (dt / substeps) > h) {
      if (++level > kMaxSubstepLevels) throw Error("ce_forward: CFL violation in slab " + std::to_string(k));
      substeps *= 2;
    }
    const double tau = dt / substeps;
    std::copy_n(rho.begin() + static_cast<std::size_t>(k) * nx, nx, cur.begin());
    for (int s = 0; s < substeps; ++s) {
      for (int m = 0; m < nx; ++m) {
        const double f = face[m];
        flux[m] = f >= 0.0 ? f * cur[m] : f * cur[(m + 1) % nx];
      }
      for (int m = 0; m < nx; ++m) cur[m] -= (tau / h) * (flux[m] - flux[(m + nx - 1) % nx]);
    }
    std::copy(cur.begin(), cur.end(), rho.begin() + static_cast<std::size_t>(k + 1) * nx);
  }
  return rho;
}

struct PicardOptions {
  double damping = 0.5;
  double tolerance = 1e-6;
  int max_iterations = 500;
};

struct PicardReport {
  EulerianState state;
  std::vector<double> residual_history;
  bool converged = false;
  int iterations = 0;
  double mass_error = 0.0;  // max_k |mass(rho_k) - mass(m0)| / mass(m0)
  double min_density = 0.0;
};

namespace detail {

// Fresh fields from the slab-midpoint density rho_bar = (rho_k + rho_{k+1})/2.
inline void FieldsFrom(const EulerProblem& pb, std::span<const double> rho, std::span<const double> v,
                       std::vector<double>& a, std::vector<double>& au, std::vector<double>& s2) {
  const int nx = pb.grid.cells;
  a.resize(static_cast<std::size_t>(pb.slabs) * nx);
  au.resize(a.size());
  s2.resize(a.size());
  std::vector<double> rb(nx), rv(nx), rv2(nx);
  for (int k = 0; k < pb.slabs; ++k) {
    const std::size_t off = static_cast<std::size_t>(k) * nx;
    for (int m = 0; m < nx; ++m) {
      rb[m] = 0.5 * (rho[off + m] + rho[off + nx + m]);
      rv[m] = rb[m] * v[off + m];
      rv2[m] = rv[m] * v[off + m];
    }
    const auto ca = ConvolvePeriodic(pb.grid, rb, pb.kernel);
    const auto cau = ConvolvePeriodic(pb.grid, rv, pb.kernel);
    const auto cs2 = ConvolvePeriodic(pb.grid, rv2, pb.kernel);
    std::copy(ca.begin(), ca.end(), a.begin() + off);
    std::copy(cau.begin(), cau.end(), au.begin() + off);
    std::copy(cs2.begin(), cs2.end(), s2.begin() + off);
  }
}

inline double RelativeChange(const std::vector<double>& fresh, const std::vector<double>& old) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t c = 0; c < fresh.size(); ++c) {
    diff = std::max(diff, std::abs(fresh[c] - old[c]));
    scale = std::max(scale, std::max(std::abs(fresh[c]), std::abs(old[c])));
  }
  return scale == 0.0 ? 0.0 : diff / scale;
}

}  // namespace detail

// Damped fixed-point iteration X <- (1 - theta) X + theta X~(X) on the
// fields X = (a, au, s2), starting from the still density rho = m0, v = 0.
// Non-convergence is reported, not thrown.
inline PicardReport PicardSolve(const EulerProblem& pb, const PicardOptions& opt) {
  pb.Validate();
  if (!(opt.damping > 0.0 && opt.damping <= 1.0)) throw ValidationError("picard damping must lie in (0,1]");
  const int nx = pb.grid.cells;
  const double h = pb.grid.spacing();
  PicardReport rep;
  EulerianState& st = rep.state;
  st.grid = pb.grid;
  st.slabs = pb.slabs;
  std::vector<double> rho0(static_cast<std::size_t>(pb.slabs + 1) * nx);
  for (int k = 0; k <= pb.slabs; ++k) std::copy(pb.m0.begin(), pb.m0.end(), rho0.begin() + k * nx);
  detail::FieldsFrom(pb, rho0, std::vector<double>(static_cast<std::size_t>(pb.slabs) * nx, 0.0), st.a, st.au, st.s2);

  std::vector<double> na, nau, ns2;
  for (int it = 1; it <= opt.max_iterations; ++it) {
    st.phi = HjBackward(pb, st.a, st.au, st.s2);
    st.v = FeedbackVelocity(pb, st.phi, st.a, st.au);
    st.rho = CeForward(pb.grid, pb.slabs, pb.dt, st.v, pb.m0);
    detail::FieldsFrom(pb, st.rho, st.v, na, nau, ns2);
    const double res = std::max({detail::RelativeChange(na, st.a), detail::RelativeChange(nau, st.au),
                                 detail::RelativeChange(ns2, st.s2)});
    rep.residual_history.push_back(res);
    rep.iterations = it;
    const double th = opt.damping;
    for (std::size_t c = 0; c < st.a.size(); ++c) {
      st.a[c] = (1.0 - th) * st.a[c] + th * na[c];
      st.au[c] = (1.0 - th) * st.au[c] + th * nau[c];
      st.s2[c] = (1.0 - th) * st.s2[c] + th * ns2[c];
    }
    if (res <= opt.tolerance) {
      rep.converged = true;
      break;
    }
  }
  const double mass = detail::MassOf(pb.m0, h);
  rep.min_density = *std::min_element(st.rho.begin(), st.rho.end());
  for (int k = 0; k <= pb.slabs; ++k) {
    const double mk = detail::MassOf(std::span<const double>(st.rho).subspan(static_cast<std::size_t>(k) * nx, nx), h);
    rep.mass_error = std::max(rep.mass_error, std::abs(mk - mass) / mass);
  }
  return rep;
}

// Cell densities of a periodic Gaussian (wrapped over neighbouring periods),
// normalized to `mass`.
inline std::vector<double> GriddedGaussian(const PeriodicGrid& g, double mean, double stddev, double mass) {
  std::vector<double> out(g.cells, 0.0);
  for (int m = 0; m < g.cells; ++m) {
    double s = 0.0;
    for (int w = -3; w <= 3; ++w) {
      const double dx = g.center(m) - mean + w * g.length;
      s += std::exp(-0.5 * dx * dx / (stddev * stddev));
    }
    out[m] = s;
  }
  const double total = detail::MassOf(out, g.spacing());
  for (double& r : out) r *= mass / total;
  return out;
}

// Mass-normalized L1 distance between the ensemble's density (kernel density
// estimate with std `bandwidth`) and the Eulerian density, per node time.
inline std::vector<double> CrossValidate(const Ensemble& e, const EulerianState& st, double bandwidth) {
  if (e.dim() != 1 || !e.domain().is_torus()) throw Error("cross_validate: needs a 1D torus ensemble");
  if (e.steps() != st.slabs) throw Error("cross_validate: time grids differ");
  if (std::abs(e.domain().periods()[0] - st.grid.length) > 1e-12 * st.grid.length)
    throw Error("cross_validate: torus lengths differ");
  const int nx = st.grid.cells;
  const double h = st.grid.spacing();
  const double mass = e.model().total_mass();
  std::vector<double> out(st.slabs + 1), x(e.size());
  for (int k = 0; k <= st.slabs; ++k) {
    for (int i = 0; i < e.size(); ++i) x[i] = e.node(i, k)[0];
    const std::vector<double> rl = ProjectDensity(st.grid, x, e.weights(), {}, bandwidth);
    CompensatedSum s;
    for (int m = 0; m < nx; ++m) s.Add(std::abs(rl[m] - st.rho[static_cast<std::size_t>(k) * nx + m]) * h);
    out[k] = s.value() / mass;
  }
  return out;
}

// Hopf-Lax value min_y [Psi(y) + c |x - y|^2 / (2 tau)] over the given
// samples y, with the torus distance.
inline double HopfLax(const TerminalCost& psi, double length, double x, double c, double tau,
                      std::span<const double> ys) {
  double best = kInf;
  for (double y : ys) {
    double dx = x - y;
    dx -= length * std::floor(dx / length + 0.5);
    best = std::min(best, psi.Value(&y, 1) + c * dx * dx / (2.0 * tau));
  }
  return best;
}

}  // namespace velmfg
