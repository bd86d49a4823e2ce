#pragma once

#include <fftw3.h>

#include <cmath>
#include <utility>
#include <vector>

#include "gfnode/spectral.hpp"
#include "gfnode/training.hpp"

namespace gfnode {

enum class MagnitudeKind { norm, squared_norm };

// Per-mode time series of 3D spectral coefficients of the centered positions.
struct ModeTimeSeries {
  std::vector<Eigen::MatrixXd> modes;  // mode k: T_sim x 3
  double dt = 1.0;

  int num_modes() const { return static_cast<int>(modes.size()); }
  int length() const { return modes.empty() ? 0 : static_cast<int>(modes[0].rows()); }
};

// Projects every frame's mean-centered coordinates onto all N eigenvectors.
inline ModeTimeSeries project_trajectory(const Trajectory& traj,
                                         const LaplacianSpectrum& spectrum) {
  traj.validate();
  const int N = spectrum.size();
  if (traj.num_atoms() != N)
    throw InvalidArgumentError("project_trajectory: trajectory does not match the spectrum");
  const int T = traj.num_frames();

  ModeTimeSeries out;
  out.modes.assign(N, Eigen::MatrixXd(T, 3));
  if (T >= 2) out.dt = traj.frames[1].timestamp - traj.frames[0].timestamp;
  for (int j = 0; j < T; ++j) {
    Eigen::MatrixXd centered =
        traj.frames[j].positions.rowwise() - traj.frames[j].positions.colwise().mean();
    Eigen::MatrixXd coeffs = spectrum.eigenvectors.transpose() * centered;  // N x 3
    for (int k = 0; k < N; ++k) out.modes[k].row(j) = coeffs.row(k);
  }
  return out;
}

namespace analysis_detail {

// One-sided PSD of a real series with the mean removed; optional Hann window.
// Normalized so the bin sum equals the series variance for the rectangular
// window. Frequencies are j / (T * dt) up to Nyquist.
struct Psd {
  std::vector<double> freq, power;
};

inline Psd power_spectrum(const std::vector<double>& s, double dt, bool hann) {
  const int T = static_cast<int>(s.size());
  Psd psd;
  if (T < 2) return psd;
  double mean = 0;
  for (double v : s) mean += v;
  mean /= T;

  std::vector<double> in(T);
  double wsum2 = 0;
  for (int j = 0; j < T; ++j) {
    const double w = hann ? 0.5 * (1.0 - std::cos(2.0 * M_PI * j / T)) : 1.0;
    in[j] = (s[j] - mean) * w;
    wsum2 += w * w;
  }

  std::vector<fftw_complex> out(T / 2 + 1);
  fftw_plan plan = fftw_plan_dft_r2c_1d(T, in.data(), out.data(), FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);

  const double norm = static_cast<double>(T) * wsum2;
  for (int j = 0; j <= T / 2; ++j) {
    const double re = out[j][0], im = out[j][1];
    const bool interior = j > 0 && !(T % 2 == 0 && j == T / 2);
    psd.freq.push_back(j / (T * dt));
    psd.power.push_back((interior ? 2.0 : 1.0) * (re * re + im * im) / norm);
  }
  return psd;
}

}  // namespace analysis_detail

// Power-weighted mean temporal frequency of one mode's magnitude series.
// Returns 0 when the series carries no power after mean removal.
inline double spectral_centroid(const ModeTimeSeries& series, int mode, MagnitudeKind magnitude,
                                bool hann_window = false) {
  if (mode < 0 || mode >= series.num_modes())
    throw InvalidArgumentError("spectral_centroid: mode out of range");
  const int T = series.length();
  if (T < 4) throw InvalidArgumentError("spectral_centroid: need at least 4 samples");

  std::vector<double> s(T);
  for (int j = 0; j < T; ++j) {
    const double n2 = series.modes[mode].row(j).squaredNorm();
    s[j] = magnitude == MagnitudeKind::norm ? std::sqrt(n2) : n2;
  }
  auto psd = analysis_detail::power_spectrum(s, series.dt, hann_window);

  double total = 0, weighted = 0;
  for (std::size_t j = 1; j < psd.freq.size(); ++j) {  // DC bin excluded
    total += psd.power[j];
    weighted += psd.freq[j] * psd.power[j];
  }
  if (total < 1e-15) return 0.0;
  return weighted / total;
}

// The point set {(lambda_k, fbar_k)} with its log-log correlation and slope.
struct JointSpectrum {
  std::vector<std::pair<double, double>> points;  // (lambda, centroid), valid modes only
  double pearson_r = 0.0;
  double loglog_slope = 0.0;
};

inline JointSpectrum joint_spectrum(const Trajectory& traj, const LaplacianSpectrum& spectrum,
                                    MagnitudeKind magnitude = MagnitudeKind::squared_norm,
                                    bool hann_window = false) {
  auto series = project_trajectory(traj, spectrum);
  JointSpectrum js;
  for (int k = 1; k < spectrum.size(); ++k) {  // the k = 0 mode is omitted
    if (spectrum.eigenvalues[k] <= 0) continue;
    const double fbar = spectral_centroid(series, k, magnitude, hann_window);
    if (fbar <= 0) continue;  // zero-power modes carry no timescale
    js.points.emplace_back(spectrum.eigenvalues[k], fbar);
  }
  const int n = static_cast<int>(js.points.size());
  if (n < 2)
    throw InsufficientDataError("joint_spectrum: fewer than 2 modes with positive power");

  double mx = 0, my = 0;
  for (auto [l, f] : js.points) {
    mx += std::log(l);
    my += std::log(f);
  }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (auto [l, f] : js.points) {
    const double dx = std::log(l) - mx, dy = std::log(f) - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx < 1e-30)
    throw InsufficientDataError("joint_spectrum: spatial frequencies are degenerate");
  js.loglog_slope = sxy / sxx;
  js.pearson_r = syy < 1e-30 ? 0.0 : sxy / std::sqrt(sxx * syy);
  return js;
}

// f^T L f = sum over edges of (f_i - f_j)^2.
inline double total_variation(const Eigen::VectorXd& f, const Eigen::MatrixXd& L) {
  if (f.size() != L.rows() || L.rows() != L.cols())
    throw InvalidArgumentError("total_variation: shape mismatch");
  return f.dot(L * f);
}

// ---- radial distribution function -------------------------------------------------

struct RdfSpec {
  bool all_heavy = true;  // all pairs with both Z > 1
  int z_a = 0, z_b = 0;   // element pair when all_heavy is false

  static RdfSpec heavy() { return RdfSpec{}; }
  static RdfSpec pair(int za, int zb) { return RdfSpec{false, za, zb}; }
};

struct RdfResult {
  std::vector<double> r;           // bin centers
  std::vector<double> g;           // normalized g(r)
  std::vector<long> raw_counts;    // per-bin pair observations
  long qualifying_pairs = 0;       // per frame
  long frames = 0;
};

// Pair-distance histogram normalized by the ideal-gas shell count
// 4 pi r^2 dr * rho, with rho the mean qualifying-pair density inside r_max.
inline RdfResult rdf(const Trajectory& traj, const RdfSpec& spec, double r_max, int n_bins) {
  traj.validate();
  if (r_max <= 0) throw InvalidArgumentError("rdf: r_max must be positive");
  if (n_bins < 2) throw InvalidArgumentError("rdf: need at least 2 bins");

  const auto& z = traj.frames.front().atomic_numbers;
  const int N = traj.num_atoms();
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < N; ++i)
    for (int j = i + 1; j < N; ++j) {
      bool ok;
      if (spec.all_heavy)
        ok = z[i] > 1 && z[j] > 1;
      else
        ok = (z[i] == spec.z_a && z[j] == spec.z_b) || (z[i] == spec.z_b && z[j] == spec.z_a);
      if (ok) pairs.emplace_back(i, j);
    }
  if (pairs.empty()) throw InsufficientDataError("rdf: no qualifying atom pairs");

  RdfResult res;
  res.qualifying_pairs = static_cast<long>(pairs.size());
  res.frames = traj.num_frames();
  res.raw_counts.assign(n_bins, 0);
  const double dr = r_max / n_bins;

  long inside = 0;
  for (const auto& frame : traj.frames)
    for (auto [i, j] : pairs) {
      const double d = (frame.positions.row(i) - frame.positions.row(j)).norm();
      if (d >= r_max) continue;
      ++res.raw_counts[static_cast<int>(d / dr)];
      ++inside;
    }
  if (inside == 0) throw InsufficientDataError("rdf: no pair distances below r_max");

  const double volume = 4.0 / 3.0 * M_PI * r_max * r_max * r_max;
  const double rho = static_cast<double>(inside) / res.frames / volume;
  for (int b = 0; b < n_bins; ++b) {
    const double rc = (b + 0.5) * dr;
    res.r.push_back(rc);
    const double shell = 4.0 * M_PI * rc * rc * dr * rho;
    const double mean_count = static_cast<double>(res.raw_counts[b]) / res.frames;
    res.g.push_back(shell > 0 ? mean_count / shell : 0.0);
  }
  return res;
}

// ---- structural error metrics ------------------------------------------------------

struct StructureMetrics {
  double bond_mae = 0.0;       // angstroms
  double bond_rel_pct = 0.0;   // MAE / mean true bond length * 100
  double angle_mae_deg = 0.0;
  double angle_rel_pct = 0.0;
  long skipped_angles = 0;     // degenerate (zero-length arm) triples
};

inline StructureMetrics structure_metrics(const Trajectory& pred, const Trajectory& truth,
                                          const std::vector<std::pair<int, int>>& bonds,
                                          const std::vector<std::array<int, 3>>& angle_triples) {
  pred.validate();
  truth.validate();
  if (pred.num_frames() != truth.num_frames() || pred.num_atoms() != truth.num_atoms())
    throw InvalidArgumentError("structure_metrics: trajectories do not match");

  StructureMetrics m;
  double bond_err = 0, bond_true = 0;
  long bond_n = 0;
  double ang_err = 0, ang_true = 0;
  long ang_n = 0;

  auto angle_deg = [](const Eigen::RowVector3d& a, const Eigen::RowVector3d& b, bool& ok) {
    const double na = a.norm(), nb = b.norm();
    if (na < 1e-12 || nb < 1e-12) {
      ok = false;
      return 0.0;
    }
    ok = true;
    const double c = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
    return std::acos(c) * 180.0 / M_PI;
  };

  for (int f = 0; f < pred.num_frames(); ++f) {
    const auto& xp = pred.frames[f].positions;
    const auto& xt = truth.frames[f].positions;
    for (auto [i, j] : bonds) {
      const double lp = (xp.row(i) - xp.row(j)).norm();
      const double lt = (xt.row(i) - xt.row(j)).norm();
      bond_err += std::abs(lp - lt);
      bond_true += lt;
      ++bond_n;
    }
    for (const auto& [i, j, k] : angle_triples) {
      bool ok_t = false, ok_p = false;
      const double at = angle_deg(xt.row(i) - xt.row(j), xt.row(k) - xt.row(j), ok_t);
      const double ap = angle_deg(xp.row(i) - xp.row(j), xp.row(k) - xp.row(j), ok_p);
      if (!ok_t || !ok_p) {
        ++m.skipped_angles;
        continue;
      }
      ang_err += std::abs(ap - at);
      ang_true += at;
      ++ang_n;
    }
  }

  if (bond_n > 0) {
    m.bond_mae = bond_err / bond_n;
    m.bond_rel_pct = bond_true > 0 ? m.bond_mae / (bond_true / bond_n) * 100.0 : 0.0;
  }
  if (ang_n > 0) {
    m.angle_mae_deg = ang_err / ang_n;
    m.angle_rel_pct = ang_true > 0 ? m.angle_mae_deg / (ang_true / ang_n) * 100.0 : 0.0;
  }
  return m;
}

// Angle triples (i, j, k) centered at j, enumerated from adjacent bond pairs.
inline std::vector<std::array<int, 3>> angle_triples_from_bonds(
    const std::vector<std::pair<int, int>>& bonds, int num_nodes) {
  std::vector<std::vector<int>> adj(num_nodes);
  for (auto [i, j] : bonds) {
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  std::vector<std::array<int, 3>> out;
  for (int j = 0; j < num_nodes; ++j)
    for (std::size_t a = 0; a < adj[j].size(); ++a)
      for (std::size_t b = a + 1; b < adj[j].size(); ++b)
        out.push_back({adj[j][a], j, adj[j][b]});
  return out;
}

}  // namespace gfnode
