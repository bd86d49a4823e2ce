#pragma once

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "gfnode/ode.hpp"
#include "gfnode/spectral.hpp"
#include "gfnode/vars.hpp"

namespace gfnode {

// gamma(t): learned affine map of the scalar time, 1 -> d.
inline Eigen::RowVectorXd time_embed(double t, const SpectralOdeParams& params) {
  if (!std::isfinite(t)) throw InvalidArgumentError("time_embed: t must be finite");
  return (params.time_W.to_eigen() * t + params.time_b.to_eigen()).row(0);
}

namespace node_detail {

using ad::Var;

inline Var time_embed_var(const VarSpectralOde& node, double t) {
  return ad::add(ad::scale(node.time_W, t), node.time_b);
}

// Multi-head self-attention across modes for the scalar channel. The input
// is M x F with modes as sequence positions.
inline Var attend_scalar(const VarAttention& a, Var X, int heads) {
  using namespace ad;
  const int M = X.tape->val(X).rows();
  const int F = X.tape->val(X).cols();
  if (F % heads != 0) throw InvalidArgumentError("attention width not divisible by heads");
  const int hd = F / heads;

  Var Q = a.biased ? linear(X, a.Wq, a.bq) : matmul(X, a.Wq);
  Var K = a.biased ? linear(X, a.Wk, a.bk) : matmul(X, a.Wk);
  Var V = a.biased ? linear(X, a.Wv, a.bv) : matmul(X, a.Wv);

  std::vector<Var> outs;
  for (int h = 0; h < heads; ++h) {
    Var Qh = slice(Q, 0, M, h * hd, hd);
    Var Kh = slice(K, 0, M, h * hd, hd);
    Var Vh = slice(V, 0, M, h * hd, hd);
    Var scores = scale(matmul(Qh, transpose(Kh)), 1.0 / std::sqrt(static_cast<double>(hd)));
    outs.push_back(matmul(softmax(scores), Vh));
  }
  Var O = heads == 1 ? outs[0] : concat(outs, 1);
  return a.biased ? linear(O, a.Wo, a.bo) : matmul(O, a.Wo);
}

// Attention for the vector channel. Projections and value mixing act on each
// spatial axis independently with shared weights; attention scores contract
// over channels AND axes, which makes them rotation invariant, so the whole
// block commutes with rotations of the 3D axes.
inline std::array<Var, 3> attend_vector(const VarAttention& a, const std::array<Var, 3>& X,
                                        int heads) {
  using namespace ad;
  const int M = X[0].tape->val(X[0]).rows();
  const int m = X[0].tape->val(X[0]).cols();
  if (m % heads != 0) throw InvalidArgumentError("attention width not divisible by heads");
  const int hd = m / heads;

  std::array<Var, 3> Q, K, V;
  for (int ax = 0; ax < 3; ++ax) {
    Q[ax] = matmul(X[ax], a.Wq);
    K[ax] = matmul(X[ax], a.Wk);
    V[ax] = matmul(X[ax], a.Wv);
  }

  std::array<std::vector<Var>, 3> outs;
  for (int h = 0; h < heads; ++h) {
    Var scores;
    for (int ax = 0; ax < 3; ++ax) {
      Var Qh = slice(Q[ax], 0, M, h * hd, hd);
      Var Kh = slice(K[ax], 0, M, h * hd, hd);
      Var s = matmul(Qh, transpose(Kh));
      scores = ax == 0 ? s : add(scores, s);
    }
    Var A = softmax(scale(scores, 1.0 / std::sqrt(3.0 * hd)));
    for (int ax = 0; ax < 3; ++ax)
      outs[ax].push_back(matmul(A, slice(V[ax], 0, M, h * hd, hd)));
  }

  std::array<Var, 3> result;
  for (int ax = 0; ax < 3; ++ax) {
    Var O = heads == 1 ? outs[ax][0] : concat(outs[ax], 1);
    result[ax] = matmul(O, a.Wo);
  }
  return result;
}

// Mode-wise linear maps: row omega of X2 is multiplied by W_omega.
inline Var mode_apply(const std::vector<Var>& W, const std::vector<Var>& b, Var X2) {
  using namespace ad;
  const int M = X2.tape->val(X2).rows();
  if (static_cast<int>(W.size()) != M)
    throw InvalidArgumentError("mode-wise weight count must equal mode count");
  std::vector<Var> rows_out;
  for (int w = 0; w < M; ++w) {
    Var row = rows(X2, w, 1);
    Var y = matmul(row, W[w]);
    if (w < static_cast<int>(b.size()) && b[w].valid()) y = add(y, b[w]);
    rows_out.push_back(y);
  }
  return M == 1 ? rows_out[0] : concat(rows_out, 0);
}

// Block-diagonal spectral derivative. Scalar channel: attention over modes,
// concat gamma(t), mode-wise affine map. Vector channel: the same pipeline
// with the time embedding entering as gamma(t) times a per-axis linear
// channel summary, so every vector-path op stays linear per axis and the
// derivative is exactly SO(3)-equivariant.
inline std::pair<Var, std::array<Var, 3>> ode_rhs_var(const VarSpectralOde& node,
                                                      const ModelDims& dims, Var Hc,
                                                      const std::array<Var, 3>& Zc, double t) {
  using namespace ad;
  ad::Tape& tape = *Hc.tape;
  const int M = tape.val(Hc).rows();
  const int m = tape.val(Zc[0]).cols();

  Var gamma = time_embed_var(node, t);  // 1 x d

  Var Hp = attend_scalar(node.attn_scalar, Hc, dims.heads);
  Var Hcat = concat({Hp, broadcast(gamma, M, dims.time_dim)}, 1);
  Var dH = mode_apply(node.mode_W_scalar, node.mode_b_scalar, Hcat);

  std::array<Var, 3> Zp = attend_vector(node.attn_vector, Zc, dims.heads);
  std::array<Var, 3> dZ;
  for (int ax = 0; ax < 3; ++ax) {
    Var summary = scale(sum_cols(Zp[ax]), 1.0 / m);  // M x 1, linear per axis
    Var tcols = matmul(summary, gamma);              // M x d
    Var Zcat = concat({Zp[ax], tcols}, 1);
    dZ[ax] = mode_apply(node.mode_W_vector, {}, Zcat);
  }
  return {dH, dZ};
}

}  // namespace node_detail

// Plain-value derivative of the spectral state (the mean has zero rate).
inline SpectralState ode_rhs(const SpectralState& state, double t, const ModelParams& params) {
  if (state.num_modes != static_cast<int>(params.node.mode_W_scalar.size()))
    throw InvalidArgumentError("ode_rhs: state mode count does not match parameters");
  ad::Tape tape;
  VarModel mv = lift(tape, params, false);
  ad::Var H = tape.constant(Tensor::from_eigen(state.scalar_coeffs));
  std::array<ad::Var, 3> Z;
  for (int a = 0; a < 3; ++a) Z[a] = tape.constant(Tensor::from_eigen(state.vector_coeffs[a]));
  auto [dH, dZ] = node_detail::ode_rhs_var(mv.node, params.dims, H, Z, t);
  SpectralState d;
  d.num_modes = state.num_modes;
  d.scalar_coeffs = tape.val(dH).to_eigen();
  for (int a = 0; a < 3; ++a) d.vector_coeffs[a] = tape.val(dZ[a]).to_eigen();
  d.vector_mean = Eigen::MatrixXd::Zero(state.channels(), 3);
  return d;
}

// ---- flat layout for the generic integrator ----------------------------------

struct SpectralLayout {
  int modes = 0, features = 0, channels = 0;

  int dim() const { return modes * features + 3 * modes * channels; }

  Eigen::VectorXd flatten(const SpectralState& s) const {
    Eigen::VectorXd y(dim());
    int p = 0;
    for (int w = 0; w < modes; ++w)
      for (int f = 0; f < features; ++f) y[p++] = s.scalar_coeffs(w, f);
    for (int w = 0; w < modes; ++w)
      for (int c = 0; c < channels; ++c)
        for (int a = 0; a < 3; ++a) y[p++] = s.vector_coeffs[a](w, c);
    return y;
  }

  SpectralState unflatten(const Eigen::VectorXd& y, const Eigen::MatrixXd& mean) const {
    SpectralState s;
    s.num_modes = modes;
    s.scalar_coeffs = Eigen::MatrixXd(modes, features);
    for (auto& ax : s.vector_coeffs) ax = Eigen::MatrixXd(modes, channels);
    s.vector_mean = mean;
    int p = 0;
    for (int w = 0; w < modes; ++w)
      for (int f = 0; f < features; ++f) s.scalar_coeffs(w, f) = y[p++];
    for (int w = 0; w < modes; ++w)
      for (int c = 0; c < channels; ++c)
        for (int a = 0; a < 3; ++a) s.vector_coeffs[a](w, c) = y[p++];
    return s;
  }

  // Scalar components get singleton groups; each (mode, channel) 3-vector is
  // one group so step control cannot depend on the molecular orientation.
  std::vector<int> error_groups() const {
    std::vector<int> g;
    g.reserve(dim());
    int next = 0;
    for (int i = 0; i < modes * features; ++i) g.push_back(next++);
    for (int w = 0; w < modes; ++w)
      for (int c = 0; c < channels; ++c) {
        for (int a = 0; a < 3; ++a) g.push_back(next);
        ++next;
      }
    return g;
  }
};

// Injection point shared by evolve() and test harnesses: integrates an
// arbitrary flat-state derivative and unpacks the requested snapshots.
// Requested times may repeat; runs of equal times reuse one snapshot.
inline std::vector<SpectralState> evolve_impl(const OdeRhs& rhs, const SpectralState& state0,
                                              const std::vector<double>& times,
                                              SolverConfig config, const SpectralLayout& layout) {
  if (times.empty()) throw InvalidArgumentError("evolve: at least one time required");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (times[i] < times[i - 1])
      throw InvalidArgumentError("evolve: times must be non-decreasing");

  std::vector<double> unique_times{times[0]};
  for (double t : times)
    if (t > unique_times.back()) unique_times.push_back(t);

  config.error_groups = layout.error_groups();
  auto sol = integrate(rhs, layout.flatten(state0), unique_times, config);

  std::vector<SpectralState> out;
  out.reserve(times.size());
  for (double t : times) {
    std::size_t idx = 0;
    while (unique_times[idx] < t) ++idx;
    out.push_back(layout.unflatten(sol.states[idx], state0.vector_mean));
  }
  return out;
}

// Evolves the truncated spectral coefficients to each requested time with the
// learned block-diagonal derivative; the vector mean is carried unchanged.
inline std::vector<SpectralState> evolve(const SpectralState& state0,
                                         const std::vector<double>& times,
                                         const ModelParams& params, const SolverConfig& config) {
  SpectralLayout layout{state0.num_modes, state0.features(), state0.channels()};
  OdeRhs rhs = [&params, layout](double t, const Eigen::VectorXd& y) {
    SpectralState s = layout.unflatten(y, Eigen::MatrixXd::Zero(layout.channels, 3));
    return layout.flatten(ode_rhs(s, t, params));
  };
  return evolve_impl(rhs, state0, times, config, layout);
}

// ---- differentiable evolution (training path) --------------------------------

struct VarSpectralState {
  ad::Var scalar;               // M x F
  std::array<ad::Var, 3> vec;   // M x m per axis
  std::array<ad::Var, 3> mean;  // 1 x m per axis
};

// Fixed-step RK4 through the tape; every stage is recorded so gradients flow
// through the discretized solution (discretize-then-differentiate).
inline std::vector<VarSpectralState> evolve_taped(const VarSpectralOde& node,
                                                  const ModelDims& dims,
                                                  const VarSpectralState& state0,
                                                  const std::vector<double>& times,
                                                  int substeps) {
  using namespace ad;
  if (times.empty()) throw InvalidArgumentError("evolve_taped: at least one time required");
  if (substeps < 1) throw InvalidArgumentError("evolve_taped: substeps must be >= 1");

  auto rhs = [&](const VarSpectralState& s, double t) {
    auto [dH, dZ] = node_detail::ode_rhs_var(node, dims, s.scalar, s.vec, t);
    return std::make_pair(dH, dZ);
  };

  std::vector<VarSpectralState> out;
  VarSpectralState cur = state0;
  double t_cur = times[0];
  out.push_back(cur);
  for (std::size_t k = 1; k < times.size(); ++k) {
    const double span = times[k] - t_cur;
    if (span < 0) throw InvalidArgumentError("evolve_taped: times must be non-decreasing");
    if (span > 0) {
      const double h = span / substeps;
      for (int s = 0; s < substeps; ++s) {
        const double t0 = t_cur + s * h;
        auto [k1H, k1Z] = rhs(cur, t0);

        auto step_state = [&](double frac, const Var& kH, const std::array<Var, 3>& kZ) {
          VarSpectralState n = cur;
          n.scalar = add(cur.scalar, scale(kH, frac * h));
          for (int a = 0; a < 3; ++a) n.vec[a] = add(cur.vec[a], scale(kZ[a], frac * h));
          return n;
        };

        auto [k2H, k2Z] = rhs(step_state(0.5, k1H, k1Z), t0 + 0.5 * h);
        auto [k3H, k3Z] = rhs(step_state(0.5, k2H, k2Z), t0 + 0.5 * h);
        auto [k4H, k4Z] = rhs(step_state(1.0, k3H, k3Z), t0 + h);

        Var combH = add(add(k1H, scale(add(k2H, k3H), 2.0)), k4H);
        cur.scalar = add(cur.scalar, scale(combH, h / 6.0));
        for (int a = 0; a < 3; ++a) {
          Var combZ = add(add(k1Z[a], scale(add(k2Z[a], k3Z[a]), 2.0)), k4Z[a]);
          cur.vec[a] = add(cur.vec[a], scale(combZ, h / 6.0));
        }
      }
      t_cur = times[k];
    }
    out.push_back(cur);
  }
  return out;
}

}  // namespace gfnode
