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

// A discrete measure on curves: N weighted piecewise-linear trajectories on a
// uniform grid of M intervals, together with the individual cost F, the
// global energy J and its exact gradient.
//
// Discretization. Velocities are constant on intervals,
//   v_k = displacement(x_{k+1}, x_k) / dt,
// the kinetic energy is K = dt/2 sum_k |v_k|^2 and the pair cost is
//   V(a, b) = dt/2 sum_k |v_k(a) - v_k(b)|^2 (eta(z_k) + eta(z_{k+1})) / 2,
// z_k = displacement(a_k, b_k). The trapezoidal kernel weight makes V exactly
// symmetric for even kernels.

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "velmfg/core.hpp"
#include "velmfg/parallel.hpp"

namespace velmfg {

// Neumaier compensated sum.
class CompensatedSum {
 public:
  void Add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

// Read-only view of one trajectory.
struct DiscreteCurve {
  std::span<const double> nodes;  // (steps + 1) * dim
  int steps = 1;
  int dim = 1;
  double dt = 1.0;
  const Domain* domain = nullptr;

  const double* node(int k) const { return nodes.data() + static_cast<std::size_t>(k) * dim; }
};

// Velocity of interval k; no wrap check.
inline void IntervalVelocity(const DiscreteCurve& c, int k, double* out) {
  c.domain->Displacement(c.node(k + 1), c.node(k), out);
  for (int a = 0; a < c.dim; ++a) out[a] /= c.dt;
}

// All interval velocities, M * d values. On the torus each step is the
// wrapped displacement, so nodes may be stored in canonical form; a step of
// half a period in some coordinate has no unique direction and is rejected.
inline std::vector<double> Velocities(const DiscreteCurve& c) {
  std::vector<double> v(static_cast<std::size_t>(c.steps) * c.dim);
  for (int k = 0; k < c.steps; ++k) IntervalVelocity(c, k, v.data() + static_cast<std::size_t>(k) * c.dim);
  if (c.domain->is_torus())
    for (std::size_t p = 0; p < v.size(); ++p) {
      const double half = 0.5 * c.domain->periods()[p % c.dim];
      if (std::abs(v[p] * c.dt) >= half * (1.0 - 1e-12))
        throw Error("velocities: torus step of half a period is ambiguous");
    }
  return v;
}

inline double KineticEnergy(const DiscreteCurve& c) {
  std::vector<double> v(c.dim);
  double s = 0.0;
  for (int k = 0; k < c.steps; ++k) {
    IntervalVelocity(c, k, v.data());
    s += SquaredNorm(v.data(), c.dim);
  }
  return 0.5 * c.dt * s;
}

inline double PairInteraction(const DiscreteCurve& a, const DiscreteCurve& b, const Kernel& kernel) {
  if (a.steps != b.steps || a.dim != b.dim || a.dt != b.dt)
    throw Error("pair_interaction: curves live on different grids");
  const int d = a.dim;
  std::vector<double> z(d), va(d), vb(d);
  auto eta_at = [&](int k) {
    a.domain->Displacement(a.node(k), b.node(k), z.data());
    return kernel.Value(z.data(), d);
  };
  double s = 0.0;
  double eta_prev = eta_at(0);
  for (int k = 0; k < a.steps; ++k) {
    const double eta_next = eta_at(k + 1);
    IntervalVelocity(a, k, va.data());
    IntervalVelocity(b, k, vb.data());
    double sq = 0.0;
    for (int c = 0; c < d; ++c) sq += (va[c] - vb[c]) * (va[c] - vb[c]);
    s += sq * 0.5 * (eta_prev + eta_next);
    eta_prev = eta_next;
  }
  return 0.5 * a.dt * s;
}

// ---------------------------------------------------------------------------

class Ensemble {
 public:
  Ensemble() = default;

  // nodes: particle-major, N * (M + 1) * d.
  Ensemble(Model model, std::vector<int> population, std::vector<double> weights,
           std::vector<double> nodes)
      : model_(std::move(model)),
        population_(std::move(population)),
        weights_(std::move(weights)),
        nodes_(std::move(nodes)) {
    model_.Validate();
    const std::size_t n = weights_.size();
    if (n == 0) throw ValidationError("ensemble needs at least one particle");
    if (population_.size() != n) throw ValidationError("ensemble: population labels size mismatch");
    if (nodes_.size() != n * stride()) throw ValidationError("ensemble: node array size mismatch");
    const int pops = static_cast<int>(model_.populations.size());
    std::vector<double> mass(pops, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (population_[i] < 0 || population_[i] >= pops)
        throw ValidationError("ensemble: population label out of range");
      if (!(weights_[i] > 0.0)) throw ValidationError("ensemble: weights must be > 0");
      mass[population_[i]] += weights_[i];
    }
    for (int q = 0; q < pops; ++q) {
      const double target = model_.populations[q].mass;
      if (std::abs(mass[q] - target) > 1e-12 * target)
        throw ValidationError("ensemble: weights of a population must sum to its mass");
    }
    for (double x : nodes_)
      if (!std::isfinite(x)) throw ValidationError("ensemble: non-finite node coordinate");
  }

  const Model& model() const { return model_; }
  int size() const { return static_cast<int>(weights_.size()); }
  int steps() const { return model_.steps; }
  int dim() const { return model_.domain.dim(); }
  double dt() const { return model_.dt(); }
  const Domain& domain() const { return model_.domain; }
  const Kernel& kernel() const { return model_.kernel; }

  double weight(int i) const { return weights_[i]; }
  const std::vector<double>& weights() const { return weights_; }
  int population(int i) const { return population_[i]; }
  const std::vector<int>& populations() const { return population_; }
  const PopulationModel& population_model(int i) const { return model_.populations[population_[i]]; }

  // Values per particle: (M + 1) * d.
  std::size_t stride() const { return static_cast<std::size_t>(steps() + 1) * dim(); }
  std::span<const double> nodes() const { return nodes_; }
  std::span<const double> curve_nodes(int i) const {
    return std::span<const double>(nodes_).subspan(i * stride(), stride());
  }
  const double* node(int i, int k) const { return nodes_.data() + i * stride() + static_cast<std::size_t>(k) * dim(); }

  DiscreteCurve curve(int i) const { return DiscreteCurve{curve_nodes(i), steps(), dim(), dt(), &model_.domain}; }

  // Nodes 1..M of every particle, N * M * d values; node 0 is not a variable.
  std::size_t free_size() const { return static_cast<std::size_t>(size()) * steps() * dim(); }

  std::vector<double> FreeNodes() const {
    std::vector<double> x(free_size());
    const std::size_t per = static_cast<std::size_t>(steps()) * dim();
    for (int i = 0; i < size(); ++i)
      std::copy_n(node(i, 1), per, x.begin() + i * per);
    return x;
  }

  void SetFreeNodes(std::span<const double> x) {
    if (x.size() != free_size()) throw Error("SetFreeNodes: size mismatch");
    const std::size_t per = static_cast<std::size_t>(steps()) * dim();
    for (int i = 0; i < size(); ++i)
      std::copy_n(x.begin() + i * per, per, nodes_.begin() + i * stride() + dim());
  }

  void SetCurveFreeNodes(int i, std::span<const double> x) {
    const std::size_t per = static_cast<std::size_t>(steps()) * dim();
    if (x.size() != per) throw Error("SetCurveFreeNodes: size mismatch");
    std::copy(x.begin(), x.end(), nodes_.begin() + i * stride() + dim());
  }

  void SetNode(int i, int k, std::span<const double> x) {
    if (k == 0) throw Error("initial nodes are fixed");
    if (k < 0 || k > steps() || static_cast<int>(x.size()) != dim()) throw Error("SetNode: bad index");
    std::copy(x.begin(), x.end(), nodes_.begin() + i * stride() + static_cast<std::size_t>(k) * dim());
  }

 private:
  Model model_;
  std::vector<int> population_;
  std::vector<double> weights_;
  std::vector<double> nodes_;
};

// Piecewise-linear refinement to 2M intervals; the curves are unchanged.
inline Ensemble RefineTime(const Ensemble& e) {
  Model m = e.model();
  m.steps = 2 * e.steps();
  const int d = e.dim();
  const std::size_t stride = static_cast<std::size_t>(m.steps + 1) * d;
  std::vector<double> nodes(e.size() * stride);
  std::vector<double> step(d);
  for (int i = 0; i < e.size(); ++i) {
    double* out = nodes.data() + i * stride;
    for (int k = 0; k < e.steps(); ++k) {
      e.domain().Displacement(e.node(i, k + 1), e.node(i, k), step.data());
      for (int c = 0; c < d; ++c) {
        out[(2 * k) * d + c] = e.node(i, k)[c];
        out[(2 * k + 1) * d + c] = e.node(i, k)[c] + 0.5 * step[c];
      }
    }
    for (int c = 0; c < d; ++c) out[(2 * e.steps()) * d + c] = e.node(i, e.steps())[c];
  }
  return Ensemble(std::move(m), e.populations(), e.weights(), std::move(nodes));
}

// ---------------------------------------------------------------------------
// Energies

// F_i = delta K(gamma_i) + Psi(gamma_i(T)) + lambda sum_j w_j V(gamma_i, gamma_j).
// The j = i term is part of the sum and vanishes at the current profile.
struct EnergyEvaluation {
  double total = 0.0;                 // J
  std::vector<double> agent_cost;     // F_i
  std::vector<double> kinetic;        // K_i
  std::vector<double> terminal;       // Psi(gamma_i(T))
  std::vector<double> interaction;    // sum_j w_j V(gamma_i, gamma_j)
  std::vector<double> gradient;       // dJ/dnodes, N * (M + 1) * d, node 0 zero
  std::vector<double> stiffness;      // per interval: delta + lambda sum_j w_j eta_bar
};

namespace detail {

inline std::vector<double> AllVelocities(const Ensemble& e) {
  const int d = e.dim(), m = e.steps();
  std::vector<double> v(static_cast<std::size_t>(e.size()) * m * d);
  for (int i = 0; i < e.size(); ++i) {
    const DiscreteCurve c = e.curve(i);
    for (int k = 0; k < m; ++k) IntervalVelocity(c, k, v.data() + (static_cast<std::size_t>(i) * m + k) * d);
  }
  return v;
}

}  // namespace detail

inline EnergyEvaluation EvaluateEnergy(const Ensemble& e, bool with_gradient = true) {
  const Model& model = e.model();
  const Kernel& kernel = model.kernel;
  const Domain& domain = model.domain;
  const int n = e.size(), m = e.steps(), d = e.dim();
  const double dt = e.dt();
  const std::size_t node_stride = static_cast<std::size_t>(m + 1) * d;
  const std::size_t vel_stride = static_cast<std::size_t>(m) * d;

  const std::vector<double> vel = detail::AllVelocities(e);

  // Per-particle accumulators with weights of the partner already applied.
  std::vector<double> row_v(n, 0.0);
  std::vector<double> vel_force(with_gradient ? n * vel_stride : 0, 0.0);
  std::vector<double> node_force(with_gradient ? n * node_stride : 0, 0.0);
  std::vector<double> kernel_mass(with_gradient ? static_cast<std::size_t>(n) * m : 0, 0.0);

  ForEachPairDeterministic(n, [&](int i, int j) {
    thread_local std::vector<double> eta, grad, sq, z;
    eta.resize(m + 1);
    grad.resize(node_stride);
    sq.resize(m);
    z.resize(d);
    for (int k = 0; k <= m; ++k) {
      domain.Displacement(e.node(i, k), e.node(j, k), z.data());
      eta[k] = with_gradient ? kernel.ValueGrad(z.data(), d, grad.data() + k * d) : kernel.Value(z.data(), d);
    }
    const double wi = e.weight(i), wj = e.weight(j);
    const double* vi = vel.data() + i * vel_stride;
    const double* vj = vel.data() + j * vel_stride;
    double v_sum = 0.0;
    for (int k = 0; k < m; ++k) {
      const double eb = 0.5 * (eta[k] + eta[k + 1]);
      double s = 0.0;
      for (int c = 0; c < d; ++c) {
        const double dv = vi[k * d + c] - vj[k * d + c];
        s += dv * dv;
        if (with_gradient) {
          vel_force[i * vel_stride + k * d + c] += wj * eb * dv;
          vel_force[j * vel_stride + k * d + c] -= wi * eb * dv;
        }
      }
      sq[k] = s;
      v_sum += s * eb;
      if (with_gradient) {
        kernel_mass[static_cast<std::size_t>(i) * m + k] += wj * eb;
        kernel_mass[static_cast<std::size_t>(j) * m + k] += wi * eb;
      }
    }
    if (with_gradient) {
      for (int k = 0; k <= m; ++k) {
        const double s = (k > 0 ? sq[k - 1] : 0.0) + (k < m ? sq[k] : 0.0);
        const double f = 0.25 * dt * s;
        for (int c = 0; c < d; ++c) {
          const double g = f * grad[k * d + c];
          node_force[i * node_stride + k * d + c] += wj * g;
          node_force[j * node_stride + k * d + c] -= wi * g;
        }
      }
    }
    v_sum *= 0.5 * dt;
    row_v[i] += wj * v_sum;
    row_v[j] += wi * v_sum;
  });

  EnergyEvaluation out;
  out.agent_cost.resize(n);
  out.kinetic.resize(n);
  out.terminal.resize(n);
  out.interaction = row_v;
  if (with_gradient) {
    out.gradient.assign(n * node_stride, 0.0);
    out.stiffness.resize(static_cast<std::size_t>(n) * m);
  }
  const double lambda = model.lambda;
  CompensatedSum total;
  std::vector<double> psi_grad(d);
  for (int i = 0; i < n; ++i) {
    const PopulationModel& pop = e.population_model(i);
    const double* vi = vel.data() + i * vel_stride;
    double kin = 0.0;
    for (int k = 0; k < m; ++k) kin += SquaredNorm(vi + k * d, d);
    kin *= 0.5 * dt;
    const double psi = pop.terminal.ValueGrad(e.node(i, m), d, psi_grad.data());
    out.kinetic[i] = kin;
    out.terminal[i] = psi;
    out.agent_cost[i] = pop.delta * kin + psi + lambda * row_v[i];
    total.Add(e.weight(i) * (out.agent_cost[i] + pop.delta * kin + psi));

    if (!with_gradient) continue;
    // dJ/dx_i = 2 w_i dF_i/dx_i for an even kernel.
    const double scale = 2.0 * e.weight(i);
    double* g = out.gradient.data() + i * node_stride;
    for (int k = 1; k <= m; ++k) {
      for (int c = 0; c < d; ++c) {
        const double v_prev = vi[(k - 1) * d + c];
        const double v_next = k < m ? vi[k * d + c] : 0.0;
        const double f_prev = vel_force[i * vel_stride + (k - 1) * d + c];
        const double f_next = k < m ? vel_force[i * vel_stride + k * d + c] : 0.0;
        double dfi = pop.delta * (v_prev - v_next) +
                     lambda * (f_prev - f_next + node_force[i * node_stride + k * d + c]);
        if (k == m) dfi += psi_grad[c];
        g[k * d + c] = scale * dfi;
      }
    }
    for (int k = 0; k < m; ++k)
      out.stiffness[static_cast<std::size_t>(i) * m + k] =
          pop.delta + lambda * kernel_mass[static_cast<std::size_t>(i) * m + k];
  }
  out.total = total.value();
  return out;
}

inline double AgentCost(int i, const Ensemble& e) {
  const DiscreteCurve ci = e.curve(i);
  const PopulationModel& pop = e.population_model(i);
  double v = 0.0;
  for (int j = 0; j < e.size(); ++j) {
    if (j == i) continue;
    v += e.weight(j) * PairInteraction(ci, e.curve(j), e.kernel());
  }
  return pop.delta * KineticEnergy(ci) + pop.terminal.Value(ci.node(e.steps()), e.dim()) +
         e.model().lambda * v;
}

inline std::vector<double> AgentCosts(const Ensemble& e) { return EvaluateEnergy(e, false).agent_cost; }

// J = sum_i w_i [2 delta K_i + 2 Psi_i] + lambda sum_{i,j} w_i w_j V_ij.
inline double TotalEnergy(const Ensemble& e) { return EvaluateEnergy(e, false).total; }

inline std::vector<double> EnergyGradient(const Ensemble& e) { return EvaluateEnergy(e, true).gradient; }

// ---------------------------------------------------------------------------
// Cost of a single deviating curve against a frozen ensemble.

// F(gamma, Q) for a curve starting anywhere, with the terminal cost and
// mobility of population `pop`. Every ensemble particle interacts with it,
// including the one the curve may be replacing. Optionally writes the
// gradient with respect to nodes 0..M and the per-interval stiffness.
inline double DeviatorCost(const Ensemble& e, int pop, std::span<const double> curve_nodes,
                           double* grad = nullptr, double* stiffness = nullptr) {
  const Model& model = e.model();
  const Kernel& kernel = model.kernel;
  const Domain& domain = model.domain;
  const int n = e.size(), m = e.steps(), d = e.dim();
  const double dt = e.dt();
  const PopulationModel& pm = model.populations.at(pop);
  const DiscreteCurve self{curve_nodes, m, d, dt, &domain};

  std::vector<double> v_self(static_cast<std::size_t>(m) * d), v_other(d), z(d);
  for (int k = 0; k < m; ++k) IntervalVelocity(self, k, v_self.data() + k * d);

  std::vector<double> vel_force, node_force, eta(m + 1), eg((m + 1) * d), sq(m), kmass;
  const bool want_grad = grad != nullptr;
  if (want_grad) {
    vel_force.assign(static_cast<std::size_t>(m) * d, 0.0);
    node_force.assign(static_cast<std::size_t>(m + 1) * d, 0.0);
    kmass.assign(m, 0.0);
  }
  double inter = 0.0;
  for (int j = 0; j < n; ++j) {
    const DiscreteCurve other = e.curve(j);
    for (int k = 0; k <= m; ++k) {
      domain.Displacement(self.node(k), other.node(k), z.data());
      eta[k] = want_grad ? kernel.ValueGrad(z.data(), d, eg.data() + k * d) : kernel.Value(z.data(), d);
    }
    const double wj = e.weight(j);
    double v_sum = 0.0;
    for (int k = 0; k < m; ++k) {
      IntervalVelocity(other, k, v_other.data());
      const double eb = 0.5 * (eta[k] + eta[k + 1]);
      double s = 0.0;
      for (int c = 0; c < d; ++c) {
        const double dv = v_self[k * d + c] - v_other[c];
        s += dv * dv;
        if (want_grad) vel_force[k * d + c] += wj * eb * dv;
      }
      sq[k] = s;
      v_sum += s * eb;
      if (want_grad) kmass[k] += wj * eb;
    }
    if (want_grad) {
      for (int k = 0; k <= m; ++k) {
        const double s = (k > 0 ? sq[k - 1] : 0.0) + (k < m ? sq[k] : 0.0);
        const double f = 0.25 * dt * s * wj;
        for (int c = 0; c < d; ++c) node_force[k * d + c] += f * eg[k * d + c];
      }
    }
    inter += wj * 0.5 * dt * v_sum;
  }

  double kin = 0.0;
  for (int k = 0; k < m; ++k) kin += SquaredNorm(v_self.data() + k * d, d);
  kin *= 0.5 * dt;
  std::vector<double> psi_grad(d);
  const double psi = pm.terminal.ValueGrad(self.node(m), d, psi_grad.data());

  if (want_grad) {
    const double lambda = model.lambda;
    for (int k = 0; k <= m; ++k) {
      for (int c = 0; c < d; ++c) {
        const double v_prev = k > 0 ? v_self[(k - 1) * d + c] : 0.0;
        const double v_next = k < m ? v_self[k * d + c] : 0.0;
        const double f_prev = k > 0 ? vel_force[(k - 1) * d + c] : 0.0;
        const double f_next = k < m ? vel_force[k * d + c] : 0.0;
        double g = pm.delta * (v_prev - v_next) + lambda * (f_prev - f_next + node_force[k * d + c]);
        if (k == m) g += psi_grad[c];
        grad[k * d + c] = g;
      }
    }
    if (stiffness)
      for (int k = 0; k < m; ++k) stiffness[k] = pm.delta + lambda * kmass[k];
  }
  return pm.delta * kin + psi + model.lambda * inter;
}

}  // namespace velmfg
