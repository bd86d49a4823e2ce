#pragma once

#include <Eigen/Dense>
#include <array>
#include <utility>

#include "gfnode/graph.hpp"

namespace gfnode {

// m channels of 3D vectors per node, stored per spatial axis so that
// axis-wise linear algebra never mixes x/y/z.
struct VectorField {
  std::array<Eigen::MatrixXd, 3> axis;  // each N x m

  VectorField() = default;
  VectorField(int nodes, int channels) {
    for (auto& a : axis) a = Eigen::MatrixXd::Zero(nodes, channels);
  }

  int nodes() const { return static_cast<int>(axis[0].rows()); }
  int channels() const { return static_cast<int>(axis[0].cols()); }

  static VectorField from_frame(const Eigen::MatrixXd& positions,
                                const Eigen::MatrixXd& velocities) {
    VectorField z(static_cast<int>(positions.rows()), 2);
    for (int a = 0; a < 3; ++a) {
      z.axis[a].col(0) = positions.col(a);
      z.axis[a].col(1) = velocities.col(a);
    }
    return z;
  }

  Eigen::MatrixXd channel(int c) const {  // N x 3
    Eigen::MatrixXd m(nodes(), 3);
    for (int a = 0; a < 3; ++a) m.col(a) = axis[a].col(c);
    return m;
  }

  // Apply a rotation to every 3-vector: axis_a' = sum_b axis_b * R(b, a).
  VectorField rotated(const Eigen::Matrix3d& R) const {
    VectorField out(nodes(), channels());
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) out.axis[a] += axis[b] * R(b, a);
    return out;
  }
};

// Truncated spectral coefficients of one configuration.
struct SpectralState {
  Eigen::MatrixXd scalar_coeffs;                 // M x F
  std::array<Eigen::MatrixXd, 3> vector_coeffs;  // each M x m
  Eigen::MatrixXd vector_mean;                   // m x 3, row = channel mean
  int num_modes = 0;

  int channels() const { return static_cast<int>(vector_coeffs[0].cols()); }
  int features() const { return static_cast<int>(scalar_coeffs.cols()); }

  bool all_finite() const {
    if (!scalar_coeffs.allFinite() || !vector_mean.allFinite()) return false;
    for (const auto& m : vector_coeffs)
      if (!m.allFinite()) return false;
    return true;
  }
};

namespace detail {
inline void check_mode_count(int M, int N) {
  if (M < 1 || M > N) throw InvalidArgumentError("mode count must satisfy 1 <= M <= N");
}
}  // namespace detail

// Row k of the result is u_k^T H. Scalars are not mean-centered; mode 0
// carries the mean of each feature column.
inline Eigen::MatrixXd gft_scalar(const Eigen::MatrixXd& H, const LaplacianSpectrum& spectrum,
                                  int M) {
  const int N = spectrum.size();
  detail::check_mode_count(M, N);
  if (H.rows() != N) throw InvalidArgumentError("gft_scalar: row count must match graph size");
  return spectrum.eigenvectors.leftCols(M).transpose() * H;
}

// Removes the per-channel mean (stored in the state) and projects each
// channel of each spatial axis onto the first M eigenvectors.
inline SpectralState gft_vector(const VectorField& Z, const LaplacianSpectrum& spectrum, int M) {
  const int N = spectrum.size();
  detail::check_mode_count(M, N);
  if (Z.nodes() != N) throw InvalidArgumentError("gft_vector: node count must match graph size");

  SpectralState s;
  s.num_modes = M;
  s.vector_mean = Eigen::MatrixXd(Z.channels(), 3);
  const auto basis = spectrum.eigenvectors.leftCols(M).transpose();
  for (int a = 0; a < 3; ++a) {
    const Eigen::RowVectorXd mean = Z.axis[a].colwise().mean();
    s.vector_mean.col(a) = mean.transpose();
    s.vector_coeffs[a] = basis * (Z.axis[a].rowwise() - mean);
  }
  return s;
}

inline SpectralState gft(const Eigen::MatrixXd& H, const VectorField& Z,
                         const LaplacianSpectrum& spectrum, int M) {
  SpectralState s = gft_vector(Z, spectrum, M);
  s.scalar_coeffs = gft_scalar(H, spectrum, M);
  return s;
}

// Reconstructs node signals: H = U_M Htilde, Z = U_M Ztilde + mean.
inline std::pair<Eigen::MatrixXd, VectorField> igft(const SpectralState& state,
                                                    const LaplacianSpectrum& spectrum) {
  const int N = spectrum.size();
  const int M = state.num_modes;
  if (M < 1 || M > N) throw InvalidArgumentError("igft: state mode count exceeds graph size");
  if (state.scalar_coeffs.rows() != M || state.vector_coeffs[0].rows() != M)
    throw InvalidArgumentError("igft: coefficient row count must equal num_modes");

  const auto basis = spectrum.eigenvectors.leftCols(M);
  Eigen::MatrixXd H = basis * state.scalar_coeffs;
  VectorField Z(N, state.channels());
  for (int a = 0; a < 3; ++a) {
    Z.axis[a] = basis * state.vector_coeffs[a];
    Z.axis[a].rowwise() += state.vector_mean.col(a).transpose();
  }
  return {std::move(H), std::move(Z)};
}

// Energy discarded by keeping only the first M modes:
// sum_{k >= M} |u_k^T x|^2 = ||x - x_(M)||^2.
inline double truncation_error(const Eigen::VectorXd& x, const LaplacianSpectrum& spectrum,
                               int M) {
  const int N = spectrum.size();
  detail::check_mode_count(M, N);
  if (x.size() != N) throw InvalidArgumentError("truncation_error: vector length mismatch");
  double err = 0.0;
  for (int k = M; k < N; ++k) {
    const double c = spectrum.eigenvectors.col(k).dot(x);
    err += c * c;
  }
  return err;
}

}  // namespace gfnode
