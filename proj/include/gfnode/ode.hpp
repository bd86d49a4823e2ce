#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gfnode/graph.hpp"

namespace gfnode {

enum class OdeMethod { dopri5, rk4 };

struct SolverConfig {
  OdeMethod method = OdeMethod::dopri5;
  double rtol = 1e-3;
  double atol = 1e-4;
  long max_steps = 100000;
  double initial_step = 0.0;  // <= 0: pick automatically (dopri5) / span/8 (rk4)

  // Optional grouping of state components for the error norm: components
  // sharing a group id are controlled by their joint Euclidean magnitude.
  // This keeps step selection invariant under rotations of grouped triples.
  // Empty means per-component control.
  std::vector<int> error_groups;

  void validate() const {
    if (rtol <= 0 || atol <= 0) throw InvalidArgumentError("tolerances must be positive");
    if (max_steps < 1) throw InvalidArgumentError("max_steps must be >= 1");
  }
};

struct OdeSolution {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> states;
  long num_rhs_evals = 0;
  long num_rejected_steps = 0;
};

using OdeRhs = std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>;

namespace detail {

// Dormand-Prince 4(5) tableau.
inline constexpr double kC[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
inline constexpr double kA21 = 1.0 / 5;
inline constexpr double kA31 = 3.0 / 40, kA32 = 9.0 / 40;
inline constexpr double kA41 = 44.0 / 45, kA42 = -56.0 / 15, kA43 = 32.0 / 9;
inline constexpr double kA51 = 19372.0 / 6561, kA52 = -25360.0 / 2187, kA53 = 64448.0 / 6561,
                        kA54 = -212.0 / 729;
inline constexpr double kA61 = 9017.0 / 3168, kA62 = -355.0 / 33, kA63 = 46732.0 / 5247,
                        kA64 = 49.0 / 176, kA65 = -5103.0 / 18656;
inline constexpr double kB1 = 35.0 / 384, kB3 = 500.0 / 1113, kB4 = 125.0 / 192,
                        kB5 = -2187.0 / 6784, kB6 = 11.0 / 84;
// 5th-order minus embedded 4th-order weights.
inline constexpr double kE1 = 71.0 / 57600, kE3 = -71.0 / 16695, kE4 = 71.0 / 1920,
                        kE5 = -17253.0 / 339200, kE6 = 22.0 / 525, kE7 = -1.0 / 40;
// Dense-output coefficients.
inline constexpr double kD1 = -12715105075.0 / 11282082432.0;
inline constexpr double kD3 = 87487479700.0 / 32700410799.0;
inline constexpr double kD4 = -10690763975.0 / 1880347072.0;
inline constexpr double kD5 = 701980252875.0 / 199316789632.0;
inline constexpr double kD6 = -1453857185.0 / 822651844.0;
inline constexpr double kD7 = 69997945.0 / 29380423.0;

// Scaled max error norm: a step is acceptable only when every component
// (or component group) satisfies |err| <= atol + rtol * |y|. Groups are
// compared by their joint Euclidean magnitude, which keeps the value
// invariant under rotations of grouped triples.
inline double error_norm(const Eigen::VectorXd& err, const Eigen::VectorXd& y0,
                         const Eigen::VectorXd& y1, const SolverConfig& cfg) {
  const int n = static_cast<int>(err.size());
  if (cfg.error_groups.empty()) {
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
      const double sc = cfg.atol + cfg.rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
      worst = std::max(worst, std::abs(err[i]) / sc);
    }
    return worst;
  }
  if (static_cast<int>(cfg.error_groups.size()) != n)
    throw InvalidArgumentError("error_groups length must match state dimension");
  const int ng = *std::max_element(cfg.error_groups.begin(), cfg.error_groups.end()) + 1;
  Eigen::VectorXd e2 = Eigen::VectorXd::Zero(ng), m0 = Eigen::VectorXd::Zero(ng),
                  m1 = Eigen::VectorXd::Zero(ng);
  for (int i = 0; i < n; ++i) {
    const int g = cfg.error_groups[i];
    e2[g] += err[i] * err[i];
    m0[g] += y0[i] * y0[i];
    m1[g] += y1[i] * y1[i];
  }
  double worst = 0.0;
  for (int g = 0; g < ng; ++g) {
    const double sc = cfg.atol + cfg.rtol * std::sqrt(std::max(m0[g], m1[g]));
    worst = std::max(worst, std::sqrt(e2[g]) / sc);
  }
  return worst;
}

inline void check_finite(const Eigen::VectorXd& v, double t) {
  if (!v.allFinite())
    throw NumericalError("rhs returned non-finite values at t=" + std::to_string(t));
}

inline OdeSolution integrate_dopri5(const OdeRhs& rhs, const Eigen::VectorXd& y0,
                                    const std::vector<double>& times, const SolverConfig& cfg) {
  OdeSolution sol;
  sol.times = times;
  sol.states.reserve(times.size());
  sol.states.push_back(y0);

  const double t_start = times.front(), t_end = times.back();
  double t = t_start;
  Eigen::VectorXd y = y0;
  Eigen::VectorXd k1 = rhs(t, y);
  ++sol.num_rhs_evals;
  check_finite(k1, t);

  // Initial step: min of 1% of the span and a magnitude-based guess.
  double h = cfg.initial_step;
  if (h <= 0) {
    const double span = t_end - t_start;
    const double d0 = error_norm(y, y, y, cfg);
    const double d1 = error_norm(k1, y, y, cfg);
    h = 0.01 * span;
    if (d0 > 1e-10 && d1 > 1e-10) h = std::min(h, 0.01 * d0 / d1);
    h = std::max(h, 1e-10 * span);
  }
  h = std::min(h, t_end - t_start);

  std::size_t next = 1;
  // Emit any leading requests that coincide with t_start.
  while (next < times.size() && times[next] <= t_start) {
    sol.states.push_back(y);
    ++next;
  }

  double err_old = 1e-4;
  long steps = 0;
  Eigen::VectorXd k2, k3, k4, k5, k6, k7, y1, err;
  while (next < times.size()) {
    if (++steps > cfg.max_steps)
      throw IntegrationError("dopri5 exceeded max_steps", t);
    h = std::min(h, t_end - t);

    k2 = rhs(t + kC[1] * h, y + h * (kA21 * k1));
    k3 = rhs(t + kC[2] * h, y + h * (kA31 * k1 + kA32 * k2));
    k4 = rhs(t + kC[3] * h, y + h * (kA41 * k1 + kA42 * k2 + kA43 * k3));
    k5 = rhs(t + kC[4] * h, y + h * (kA51 * k1 + kA52 * k2 + kA53 * k3 + kA54 * k4));
    k6 = rhs(t + h, y + h * (kA61 * k1 + kA62 * k2 + kA63 * k3 + kA64 * k4 + kA65 * k5));
    y1 = y + h * (kB1 * k1 + kB3 * k3 + kB4 * k4 + kB5 * k5 + kB6 * k6);
    k7 = rhs(t + h, y1);
    sol.num_rhs_evals += 6;
    check_finite(k7, t + h);

    err = h * (kE1 * k1 + kE3 * k3 + kE4 * k4 + kE5 * k5 + kE6 * k6 + kE7 * k7);
    const double en = error_norm(err, y, y1, cfg);

    if (en <= 1.0) {
      // Dense output for all requested times inside (t, t+h].
      const double t_new = t + h;
      if (next < times.size() && times[next] <= t_new + 1e-14 * std::abs(t_new)) {
        const Eigen::VectorXd ydiff = y1 - y;
        const Eigen::VectorXd bspl = h * k1 - ydiff;
        const Eigen::VectorXd r4 = ydiff - h * k7 - bspl;
        const Eigen::VectorXd r5 =
            h * (kD1 * k1 + kD3 * k3 + kD4 * k4 + kD5 * k5 + kD6 * k6 + kD7 * k7);
        while (next < times.size() && times[next] <= t_new + 1e-14 * std::abs(t_new)) {
          const double theta = (times[next] - t) / h;
          const double th1 = 1.0 - theta;
          sol.states.push_back(y + theta * (ydiff + th1 * (bspl + theta * (r4 + th1 * r5))));
          ++next;
        }
      }
      t = t_new;
      y.swap(y1);
      k1.swap(k7);  // FSAL
      // PI controller, safety 0.9, growth clamped to [0.2, 10].
      const double fac =
          (en == 0.0) ? 10.0
                      : std::clamp(0.9 * std::pow(en, -0.7 / 5.0) * std::pow(err_old, 0.4 / 5.0),
                                   0.2, 10.0);
      err_old = std::max(en, 1e-4);
      h *= fac;
    } else {
      ++sol.num_rejected_steps;
      h *= std::clamp(0.9 * std::pow(en, -0.2), 0.2, 1.0);
      if (!(h > 0) || t + h == t) throw IntegrationError("dopri5 step size underflow", t);
    }
  }
  return sol;
}

inline OdeSolution integrate_rk4(const OdeRhs& rhs, const Eigen::VectorXd& y0,
                                 const std::vector<double>& times, const SolverConfig& cfg) {
  OdeSolution sol;
  sol.times = times;
  sol.states.reserve(times.size());
  sol.states.push_back(y0);

  Eigen::VectorXd y = y0;
  long steps = 0;
  for (std::size_t seg = 1; seg < times.size(); ++seg) {
    const double t0 = times[seg - 1], t1 = times[seg];
    const double span = t1 - t0;
    const double h_req = cfg.initial_step > 0 ? cfg.initial_step : span / 8.0;
    const long n = std::max(1L, static_cast<long>(std::ceil(span / h_req - 1e-12)));
    const double h = span / static_cast<double>(n);
    double t = t0;
    for (long s = 0; s < n; ++s) {
      if (++steps > cfg.max_steps) throw IntegrationError("rk4 exceeded max_steps", t);
      const Eigen::VectorXd k1 = rhs(t, y);
      const Eigen::VectorXd k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1);
      const Eigen::VectorXd k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2);
      const Eigen::VectorXd k4 = rhs(t + h, y + h * k3);
      sol.num_rhs_evals += 4;
      y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      check_finite(y, t + h);
      t += h;
    }
    sol.states.push_back(y);
  }
  return sol;
}

}  // namespace detail

// Integrates dy/dt = rhs(t, y) and reports the state at each requested time.
// times must be strictly increasing with times[0] the initial time;
// states[0] is y0 exactly.
inline OdeSolution integrate(const OdeRhs& rhs, const Eigen::VectorXd& y0,
                             const std::vector<double>& times, const SolverConfig& cfg) {
  cfg.validate();
  if (times.empty()) throw InvalidArgumentError("integrate: at least one time required");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (times[i] <= times[i - 1])
      throw InvalidArgumentError("integrate: times must be strictly increasing");
  if (times.size() == 1) {
    OdeSolution sol;
    sol.times = times;
    sol.states.push_back(y0);
    return sol;
  }
  return cfg.method == OdeMethod::dopri5 ? detail::integrate_dopri5(rhs, y0, times, cfg)
                                         : detail::integrate_rk4(rhs, y0, times, cfg);
}

// Graph heat flow: df/dt = -L f.
inline OdeRhs heat_rhs(const Eigen::MatrixXd& L) {
  if ((L - L.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw InvalidInputError("heat_rhs: matrix must be symmetric");
  return [L](double, const Eigen::VectorXd& f) -> Eigen::VectorXd { return -(L * f); };
}

// Closed form of the heat flow: sum_k (u_k^T f0) exp(-lambda_k t) u_k.
inline Eigen::VectorXd heat_closed_form(const LaplacianSpectrum& spectrum,
                                        const Eigen::VectorXd& f0, double t) {
  if (t < 0) throw InvalidArgumentError("heat_closed_form: t must be non-negative");
  if (f0.size() != spectrum.size())
    throw InvalidArgumentError("heat_closed_form: dimension mismatch");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(f0.size());
  for (int k = 0; k < spectrum.size(); ++k) {
    const double c = spectrum.eigenvectors.col(k).dot(f0);
    out += c * std::exp(-spectrum.eigenvalues[k] * t) * spectrum.eigenvectors.col(k);
  }
  return out;
}

}  // namespace gfnode
