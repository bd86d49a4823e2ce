#pragma once

#include <utility>
#include <vector>

#include "gfnode/gnn.hpp"
#include "gfnode/spectral_node.hpp"

namespace gfnode {

struct PipelineConfig {
  double cutoff = 1.6;        // angstroms, strict inequality
  double time_scale = 3000.0; // simulation-step span mapped to unit time
  SolverConfig solver;        // inference-time integrator (dopri5 defaults)
  int train_substeps = 8;     // fixed RK4 steps per interval when training

  void validate() const {
    if (cutoff <= 0) throw InvalidArgumentError("cutoff must be positive");
    if (time_scale <= 0) throw InvalidArgumentError("time_scale must be positive");
    if (train_substeps < 1) throw InvalidArgumentError("train_substeps must be >= 1");
    solver.validate();
  }
};

// Differentiable end-to-end forward pass: encode, truncated GFT, spectral
// ODE via taped RK4, inverse GFT, decode. rel_times are offsets from the
// initial frame normalized by the configured time scale (t0 maps to 0).
struct TapedForward {
  std::vector<ad::Var> h;     // decoded scalar features per requested time
  std::vector<VarField> z;    // decoded vector features per requested time
};

inline TapedForward forward_taped(ad::Tape& tape, const VarModel& model,
                                  const MolecularFrame& frame0, const MolecularGraph& graph,
                                  const LaplacianSpectrum& spectrum,
                                  const std::vector<double>& rel_times, int substeps) {
  using namespace ad;
  const int N = spectrum.size();
  const int M = model.dims.modes;
  const int m = model.dims.channels;
  if (M > N)
    throw InvalidArgumentError("model retains more modes than the molecule has atoms");

  auto edges = EdgeIndex::build(graph);
  auto [h0, z0] = init_features(tape, model, frame0);
  auto [h_enc, z_enc] = codec_apply(model.encoder, h0, z0, edges);

  // truncated GFT on the tape; the basis is a constant
  Tensor Ut = Tensor::from_eigen(spectrum.eigenvectors.leftCols(M).transpose());
  Tensor U = Tensor::from_eigen(spectrum.eigenvectors.leftCols(M));
  Var Ut_c = tape.constant(Ut);
  Var U_c = tape.constant(U);

  VarSpectralState s0;
  s0.scalar = matmul(Ut_c, h_enc);
  for (int a = 0; a < 3; ++a) {
    s0.mean[a] = mean_rows(z_enc.axis[a]);  // 1 x m
    Var centered = sub(z_enc.axis[a], broadcast(s0.mean[a], N, m));
    s0.vec[a] = matmul(Ut_c, centered);
  }

  std::vector<double> times{0.0};
  times.insert(times.end(), rel_times.begin(), rel_times.end());
  auto states = evolve_taped(model.node, model.dims, s0, times, substeps);

  TapedForward out;
  for (std::size_t k = 1; k < states.size(); ++k) {
    Var h_rec = matmul(U_c, states[k].scalar);
    VarField z_rec;
    for (int a = 0; a < 3; ++a)
      z_rec.axis[a] = add(matmul(U_c, states[k].vec[a]), broadcast(states[k].mean[a], N, m));
    auto [h_dec, z_dec] = codec_apply(model.decoder, h_rec, z_rec, edges);
    out.h.push_back(h_dec);
    out.z.push_back(z_dec);
  }
  return out;
}

// Full-pipeline inference at arbitrary continuous times (including times
// finer than any training grid). The graph and spectral basis come from the
// initial frame and stay fixed; the spectral coefficients are integrated
// with the configured solver.
inline std::vector<MolecularFrame> predict(const MolecularFrame& frame0,
                                           const std::vector<double>& target_times,
                                           const ModelParams& params,
                                           const PipelineConfig& config) {
  config.validate();
  frame0.validate();
  if (target_times.empty()) throw InvalidArgumentError("predict: no target times given");
  for (std::size_t i = 0; i < target_times.size(); ++i) {
    if (target_times[i] < frame0.timestamp)
      throw InvalidArgumentError("predict: target times must not precede the initial frame");
    if (i > 0 && target_times[i] < target_times[i - 1])
      throw InvalidArgumentError("predict: target times must be non-decreasing");
  }

  auto graph = build_graph(frame0, config.cutoff);
  auto spectrum = eig_decompose(laplacian(graph));
  const int M = params.dims.modes;
  if (M > spectrum.size())
    throw InvalidArgumentError("model retains more modes than the molecule has atoms");

  auto [h_enc, z_enc] = encode(frame0, graph, params);
  SpectralState s0 = gft(h_enc, z_enc, spectrum, M);

  std::vector<double> rel;
  rel.reserve(target_times.size() + 1);
  rel.push_back(0.0);
  for (double t : target_times) rel.push_back((t - frame0.timestamp) / config.time_scale);

  auto states = evolve(s0, rel, params, config.solver);

  std::vector<MolecularFrame> out;
  out.reserve(target_times.size());
  for (std::size_t k = 1; k < states.size(); ++k) {
    auto [h_rec, z_rec] = igft(states[k], spectrum);
    auto [h_dec, z_dec] = decode(h_rec, z_rec, graph, params);
    MolecularFrame f;
    f.positions = z_dec.channel(0);
    f.velocities = z_dec.channel(1);
    f.atomic_numbers = frame0.atomic_numbers;
    f.timestamp = target_times[k - 1];
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace gfnode
