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

// Model primitives: the spatial domain, the velocity-alignment kernel, the
// terminal costs and the scalar game parameters. Everything here is a pure
// function of its inputs.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace velmfg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A violated invariant on user-supplied configuration.
class ValidationError : public Error {
 public:
  using Error::Error;
};

using Point = std::vector<double>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline double Dot(const double* a, const double* b, int d) {
  double s = 0.0;
  for (int c = 0; c < d; ++c) s += a[c] * b[c];
  return s;
}

inline double SquaredNorm(const double* a, int d) { return Dot(a, a, d); }

inline double Norm(std::span<const double> a) {
  return std::sqrt(SquaredNorm(a.data(), static_cast<int>(a.size())));
}

// ---------------------------------------------------------------------------
// Domain

enum class DomainKind { kEuclidean, kTorus };

class Domain {
 public:
  Domain() = default;

  static Domain Euclidean(int dim) {
    if (dim < 1) throw ValidationError("domain dimension must be >= 1");
    Domain d;
    d.kind_ = DomainKind::kEuclidean;
    d.dim_ = dim;
    return d;
  }

  static Domain Torus(std::vector<double> periods) {
    if (periods.empty()) throw ValidationError("torus needs at least one period");
    for (double p : periods) {
      if (!(p > 0.0) || !std::isfinite(p))
        throw ValidationError("torus periods must be strictly positive");
    }
    Domain d;
    d.kind_ = DomainKind::kTorus;
    d.dim_ = static_cast<int>(periods.size());
    d.periods_ = std::move(periods);
    return d;
  }

  DomainKind kind() const { return kind_; }
  bool is_torus() const { return kind_ == DomainKind::kTorus; }
  int dim() const { return dim_; }
  const std::vector<double>& periods() const { return periods_; }

  double min_period() const {
    if (!is_torus()) return kInf;
    return *std::min_element(periods_.begin(), periods_.end());
  }

  // Largest possible |displacement| (half the period diagonal on the torus).
  double half_diagonal() const {
    if (!is_torus()) return kInf;
    double s = 0.0;
    for (double p : periods_) s += 0.25 * p * p;
    return std::sqrt(s);
  }

  // out = x - y, wrapped componentwise into [-p/2, p/2) on the torus.
  void Displacement(const double* x, const double* y, double* out) const {
    if (kind_ == DomainKind::kEuclidean) {
      for (int c = 0; c < dim_; ++c) out[c] = x[c] - y[c];
      return;
    }
    for (int c = 0; c < dim_; ++c) {
      const double p = periods_[c];
      const double diff = x[c] - y[c];
      out[c] = diff - p * std::floor(diff / p + 0.5);
    }
  }

  Point Displacement(std::span<const double> x, std::span<const double> y) const {
    if (static_cast<int>(x.size()) != dim_ || static_cast<int>(y.size()) != dim_)
      throw Error("displacement: dimension mismatch");
    Point out(dim_);
    Displacement(x.data(), y.data(), out.data());
    return out;
  }

  // Canonical representative in [0, p) on the torus; identity otherwise.
  void Wrap(double* x) const {
    if (!is_torus()) return;
    for (int c = 0; c < dim_; ++c) {
      const double p = periods_[c];
      x[c] -= p * std::floor(x[c] / p);
      if (x[c] >= p) x[c] -= p;
    }
  }

  bool operator==(const Domain&) const = default;

 private:
  DomainKind kind_ = DomainKind::kEuclidean;
  int dim_ = 1;
  std::vector<double> periods_;
};

// ---------------------------------------------------------------------------
// Interaction kernel

enum class KernelFamily { kSmoothedExponential, kGaussian, kConstant };

inline const char* KernelFamilyName(KernelFamily f) {
  switch (f) {
    case KernelFamily::kSmoothedExponential:
      return "smoothed-exponential";
    case KernelFamily::kGaussian:
      return "gaussian";
    case KernelFamily::kConstant:
      return "constant";
  }
  return "?";
}

// Even, positive, bounded kernels.
//   smoothed-exponential: A exp(-sqrt(|z|^2 + s^2) / eps)
//   gaussian:             A exp(-|z|^2 / (2 eps^2))
//   constant:             A                (hand-checkable tests only)
struct Kernel {
  KernelFamily family = KernelFamily::kSmoothedExponential;
  double amplitude = 1.0;
  double length = 1.0;
  double smoothing = 0.0;

  static Kernel SmoothedExponential(double amplitude, double length,
                                    double smoothing) {
    Kernel k{KernelFamily::kSmoothedExponential, amplitude, length, smoothing};
    k.Validate();
    return k;
  }
  static Kernel Gaussian(double amplitude, double length) {
    Kernel k{KernelFamily::kGaussian, amplitude, length, 0.0};
    k.Validate();
    return k;
  }
  static Kernel Constant(double amplitude) {
    Kernel k{KernelFamily::kConstant, amplitude, 1.0, 0.0};
    k.Validate();
    return k;
  }

  void Validate() const {
    if (!(amplitude > 0.0) || !std::isfinite(amplitude))
      throw ValidationError("kernel amplitude must be > 0");
    if (!(length > 0.0) || !std::isfinite(length))
      throw ValidationError("kernel length scale must be > 0");
    if (!(smoothing >= 0.0) || !std::isfinite(smoothing))
      throw ValidationError("kernel smoothing must be >= 0");
    if (family != KernelFamily::kSmoothedExponential && smoothing != 0.0)
      throw ValidationError("kernel smoothing only applies to smoothed-exponential");
  }

  // Every family shipped here satisfies eta(z) == eta(-z).
  bool is_even() const { return true; }

  double sup() const { return amplitude; }

  double Value(const double* z, int d) const {
    switch (family) {
      case KernelFamily::kSmoothedExponential:
        return amplitude * std::exp(-std::sqrt(SquaredNorm(z, d) + smoothing * smoothing) / length);
      case KernelFamily::kGaussian:
        return amplitude * std::exp(-SquaredNorm(z, d) / (2.0 * length * length));
      case KernelFamily::kConstant:
        return amplitude;
    }
    return 0.0;
  }

  // Returns eta(z) and writes grad eta(z) into grad.
  double ValueGrad(const double* z, int d, double* grad) const {
    switch (family) {
      case KernelFamily::kSmoothedExponential: {
        const double r = std::sqrt(SquaredNorm(z, d) + smoothing * smoothing);
        const double eta = amplitude * std::exp(-r / length);
        if (r == 0.0) {
          // s = 0 at the origin: the symmetry point, gradient set to zero.
          for (int c = 0; c < d; ++c) grad[c] = 0.0;
        } else {
          const double f = -eta / (length * r);
          for (int c = 0; c < d; ++c) grad[c] = f * z[c];
        }
        return eta;
      }
      case KernelFamily::kGaussian: {
        const double eta = amplitude * std::exp(-SquaredNorm(z, d) / (2.0 * length * length));
        const double f = -eta / (length * length);
        for (int c = 0; c < d; ++c) grad[c] = f * z[c];
        return eta;
      }
      case KernelFamily::kConstant:
        for (int c = 0; c < d; ++c) grad[c] = 0.0;
        return amplitude;
    }
    return 0.0;
  }

  std::pair<double, Point> EvalGrad(std::span<const double> z) const {
    Point g(z.size());
    const double v = ValueGrad(z.data(), static_cast<int>(z.size()), g.data());
    return {v, std::move(g)};
  }

  // Constant C with |grad eta(z)| <= C eta(z) for |z| <= max_distance.
  double GradientRatioBound(double max_distance) const {
    switch (family) {
      case KernelFamily::kSmoothedExponential:
        return 1.0 / length;
      case KernelFamily::kGaussian:
        return max_distance / (length * length);
      case KernelFamily::kConstant:
        return 0.0;
    }
    return kInf;
  }

  bool operator==(const Kernel&) const = default;
};

// ---------------------------------------------------------------------------
// Terminal cost

struct LinearTerm {
  Point gradient;
  bool operator==(const LinearTerm&) const = default;
};

// 1/2 kappa |x - center|^2. On a torus the distance is measured in the
// embedding x_c -> (p_c / 2 pi)(cos, sin)(2 pi x_c / p_c), which keeps the
// term smooth and periodic: kappa (p/2pi)^2 (1 - cos(2 pi (x - center) / p))
// per coordinate. Optional per-axis factors restrict or reweight the
// coordinates (empty means all ones).
struct QuadraticWell {
  Point center;
  double stiffness = 0.0;
  std::vector<double> axes;
  double axis(int c) const { return axes.empty() ? 1.0 : axes[c]; }
  double max_axis() const {
    double m = axes.empty() ? 1.0 : 0.0;
    for (double a : axes) m = std::max(m, a);
    return m;
  }
  bool operator==(const QuadraticWell&) const = default;
};

class TerminalCost {
 public:
  TerminalCost() = default;
  TerminalCost(std::vector<LinearTerm> linear, std::vector<QuadraticWell> wells)
      : linear_(std::move(linear)), wells_(std::move(wells)) {}

  static TerminalCost Linear(Point g) { return TerminalCost({LinearTerm{std::move(g)}}, {}); }
  static TerminalCost Well(Point center, double stiffness) {
    return TerminalCost({}, {QuadraticWell{std::move(center), stiffness, {}}});
  }

  TerminalCost& Add(LinearTerm t) {
    linear_.push_back(std::move(t));
    return *this;
  }
  TerminalCost& Add(QuadraticWell w) {
    wells_.push_back(std::move(w));
    return *this;
  }

  const std::vector<LinearTerm>& linear() const { return linear_; }
  const std::vector<QuadraticWell>& wells() const { return wells_; }
  const std::vector<double>& periods() const { return periods_; }
  bool empty() const { return linear_.empty() && wells_.empty(); }

  // Switches the quadratic wells to the periodic embedding of a torus.
  void BindDomain(const Domain& domain) {
    if (domain.is_torus() && !linear_.empty())
      throw ValidationError("linear terminal cost is not periodic; use a quadratic well on the torus");
    periods_ = domain.is_torus() ? domain.periods() : std::vector<double>{};
  }

  void Validate(int dim) const {
    for (const auto& t : linear_) {
      if (static_cast<int>(t.gradient.size()) != dim)
        throw ValidationError("linear terminal cost: dimension mismatch");
    }
    for (const auto& w : wells_) {
      if (static_cast<int>(w.center.size()) != dim)
        throw ValidationError("quadratic well: dimension mismatch");
      if (!(w.stiffness >= 0.0)) throw ValidationError("quadratic well stiffness must be >= 0");
      if (!w.axes.empty() && static_cast<int>(w.axes.size()) != dim)
        throw ValidationError("quadratic well axes: dimension mismatch");
      for (double a : w.axes)
        if (!(a >= 0.0)) throw ValidationError("quadratic well axes must be >= 0");
    }
  }

  double ValueGrad(const double* x, int d, double* grad) const {
    double value = 0.0;
    for (int c = 0; c < d; ++c) grad[c] = 0.0;
    for (const auto& t : linear_) {
      value += Dot(t.gradient.data(), x, d);
      for (int c = 0; c < d; ++c) grad[c] += t.gradient[c];
    }
    for (const auto& w : wells_) {
      for (int c = 0; c < d; ++c) {
        const double diff = x[c] - w.center[c];
        const double k = w.stiffness * w.axis(c);
        if (periods_.empty()) {
          value += 0.5 * k * diff * diff;
          grad[c] += k * diff;
        } else {
          const double radius = periods_[c] / (2.0 * std::numbers::pi);
          const double angle = diff / radius;
          value += k * radius * radius * (1.0 - std::cos(angle));
          grad[c] += k * radius * std::sin(angle);
        }
      }
    }
    return value;
  }

  double Value(const double* x, int d) const {
    std::vector<double> g(d);
    return ValueGrad(x, d, g.data());
  }

  std::pair<double, Point> EvalGrad(std::span<const double> x) const {
    Point g(x.size());
    const double v = ValueGrad(x.data(), static_cast<int>(x.size()), g.data());
    return {v, std::move(g)};
  }

  // Sum of well stiffnesses: an upper bound on the Hessian eigenvalues.
  double CurvatureBound() const {
    double k = 0.0;
    for (const auto& w : wells_) k += w.stiffness * w.max_axis();
    return k;
  }

  // Lipschitz constant of the cost on the box [lo, hi].
  double LipschitzOn(std::span<const double> lo, std::span<const double> hi) const {
    const int d = static_cast<int>(lo.size());
    double lip = 0.0;
    Point g_sum(d, 0.0);
    for (const auto& t : linear_)
      for (int c = 0; c < d; ++c) g_sum[c] += t.gradient[c];
    lip += Norm(g_sum);
    for (const auto& w : wells_) {
      if (!periods_.empty()) {
        double s = 0.0;
        for (int c = 0; c < d; ++c) {
          const double radius = periods_[c] / (2.0 * std::numbers::pi);
          s += radius * radius;
        }
        lip += w.stiffness * w.max_axis() * std::sqrt(s);
        continue;
      }
      double far = 0.0;
      for (int c = 0; c < d; ++c) {
        const double m = std::max(std::abs(lo[c] - w.center[c]), std::abs(hi[c] - w.center[c]));
        far += m * m;
      }
      lip += w.stiffness * w.max_axis() * std::sqrt(far);
    }
    return lip;
  }

  bool operator==(const TerminalCost&) const = default;

 private:
  std::vector<LinearTerm> linear_;
  std::vector<QuadraticWell> wells_;
  std::vector<double> periods_;
};

// ---------------------------------------------------------------------------
// Game parameters

struct PopulationModel {
  double mass = 1.0;    // total initial mass, not normalized across populations
  double delta = 1.0;   // mobility weight on the kinetic energy
  TerminalCost terminal;
  bool operator==(const PopulationModel&) const = default;
};

// Everything the energies need besides the trajectories themselves.
struct Model {
  Domain domain = Domain::Euclidean(1);
  Kernel kernel;
  double lambda = 1.0;   // interaction weight
  double horizon = 1.0;  // T
  int steps = 16;        // M
  std::vector<PopulationModel> populations;

  double dt() const { return horizon / steps; }

  double total_mass() const {
    double m = 0.0;
    for (const auto& p : populations) m += p.mass;
    return m;
  }

  double min_delta() const {
    double d = kInf;
    for (const auto& p : populations) d = std::min(d, p.delta);
    return d;
  }

  void Validate() const {
    kernel.Validate();
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ValidationError("lambda must be > 0");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ValidationError("horizon T must be > 0");
    if (steps < 1) throw ValidationError("time steps M must be >= 1");
    if (populations.empty()) throw ValidationError("at least one population is required");
    for (const auto& p : populations) {
      if (!(p.mass > 0.0) || !std::isfinite(p.mass)) throw ValidationError("population mass must be > 0");
      if (!(p.delta > 0.0) || !std::isfinite(p.delta)) throw ValidationError("population delta must be > 0");
      p.terminal.Validate(domain.dim());
      if (domain.is_torus() && !p.terminal.linear().empty())
        throw ValidationError("linear terminal cost is not periodic; use a quadratic well on the torus");
      if (p.terminal.periods() != (domain.is_torus() ? domain.periods() : std::vector<double>{}))
        throw ValidationError("terminal cost not bound to the domain");
    }
  }

  // Binds the terminal costs to the domain and validates.
  void Finalize() {
    for (auto& p : populations) p.terminal.BindDomain(domain);
    Validate();
  }

  bool operator==(const Model&) const = default;
};

}  // namespace velmfg
