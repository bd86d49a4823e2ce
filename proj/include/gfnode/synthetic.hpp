#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "gfnode/ode.hpp"
#include "gfnode/training.hpp"

namespace gfnode {

// Exact heat-flow samples: scalar node signal under df/dt = -L f.
struct HeatTrajectory {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> signals;
};

inline HeatTrajectory gen_heat_trajectory(const MolecularGraph& graph, const Eigen::VectorXd& f0,
                                          const std::vector<double>& times) {
  auto spectrum = eig_decompose(laplacian(graph));
  HeatTrajectory out;
  out.times = times;
  for (double t : times) out.signals.push_back(heat_closed_form(spectrum, f0, t));
  return out;
}

// Trajectory whose mode-k coefficient oscillates at freq_fn(lambda_k) along
// the x axis: X(t) = X0 + sum_k a_k sin(2 pi f_k t) u_k e_x^T. Ground-truth
// spectral centroids are known by construction.
inline Trajectory gen_planted_modes(const MolecularFrame& base, const MolecularGraph& graph,
                                    const Eigen::VectorXd& amplitudes,
                                    const std::function<double(double)>& freq_fn, double dt,
                                    int T_sim) {
  base.validate();
  if (T_sim < 1) throw InvalidArgumentError("T_sim must be >= 1");
  if (dt <= 0) throw InvalidArgumentError("dt must be positive");
  auto spectrum = eig_decompose(laplacian(graph));
  const int N = spectrum.size();
  if (amplitudes.size() != N)
    throw InvalidArgumentError("amplitudes must have one entry per mode");
  if (base.num_atoms() != N)
    throw InvalidArgumentError("base frame must match the graph size");

  std::vector<double> freqs(N, 0.0);
  for (int k = 0; k < N; ++k) {
    freqs[k] = freq_fn(spectrum.eigenvalues[k]);
    if (spectrum.eigenvalues[k] > 0 && freqs[k] <= 0)
      throw InvalidArgumentError("freq_fn must be positive on positive eigenvalues");
  }

  Trajectory traj;
  traj.name = "planted_modes";
  for (int j = 0; j < T_sim; ++j) {
    const double t = j * dt;
    MolecularFrame f = base;
    f.timestamp = t;
    for (int k = 0; k < N; ++k) {
      if (amplitudes[k] == 0.0) continue;
      const double phase = 2.0 * M_PI * freqs[k] * t;
      f.positions.col(0) += amplitudes[k] * std::sin(phase) * spectrum.eigenvectors.col(k);
      f.velocities.col(0) += amplitudes[k] * 2.0 * M_PI * freqs[k] * std::cos(phase) *
                             spectrum.eigenvectors.col(k);
    }
    traj.frames.push_back(std::move(f));
  }
  return traj;
}

// 1D chain of unit masses joined by springs (rest length 1), embedded in 3D
// along x and integrated with symplectic Euler. displacement bends the chain
// out of equilibrium at t = 0 with zero initial velocity.
inline Trajectory gen_harmonic_chain(int n_atoms, double spring_k, double dt, int steps,
                                     double displacement = 0.1) {
  if (n_atoms < 2) throw InvalidArgumentError("chain needs at least two atoms");
  if (spring_k <= 0 || dt <= 0 || steps < 1)
    throw InvalidArgumentError("spring_k, dt and steps must be positive");

  const double rest = 1.0;
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n_atoms, 3);
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n_atoms, 3);
  for (int i = 0; i < n_atoms; ++i) {
    x(i, 0) = rest * i;
    if (n_atoms > 1)
      x(i, 0) += displacement * std::sin(M_PI * i / (n_atoms - 1.0));
  }

  auto forces = [&](const Eigen::MatrixXd& pos) {
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(n_atoms, 3);
    for (int i = 0; i + 1 < n_atoms; ++i) {
      Eigen::RowVector3d d = pos.row(i + 1) - pos.row(i);
      const double len = d.norm();
      if (len < 1e-12) continue;
      Eigen::RowVector3d pull = spring_k * (len - rest) * (d / len);
      f.row(i) += pull;
      f.row(i + 1) -= pull;
    }
    return f;
  };

  Trajectory traj;
  traj.name = "harmonic_chain";
  auto snapshot = [&](int step) {
    MolecularFrame f;
    f.positions = x;
    f.velocities = v;
    f.atomic_numbers.assign(n_atoms, 6);
    f.timestamp = static_cast<double>(step);
    traj.frames.push_back(std::move(f));
  };
  snapshot(0);
  for (int s = 1; s <= steps; ++s) {
    v += dt * forces(x);  // unit masses
    x += dt * v;
    snapshot(s);
  }
  return traj;
}

// Kinetic + spring potential energy of a chain frame (for drift checks).
inline double chain_energy(const MolecularFrame& f, double spring_k, double rest = 1.0) {
  double e = 0.5 * f.velocities.squaredNorm();
  for (int i = 0; i + 1 < f.num_atoms(); ++i) {
    const double stretch = (f.positions.row(i + 1) - f.positions.row(i)).norm() - rest;
    e += 0.5 * spring_k * stretch * stretch;
  }
  return e;
}

}  // namespace gfnode
