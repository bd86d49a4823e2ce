#pragma once

#include <array>
#include <utility>

#include "gfnode/spectral.hpp"
#include "gfnode/vars.hpp"

namespace gfnode {

// Tape-resident vector features: m channels of 3-vectors per node, one
// N x m matrix per spatial axis. Keeping the axes as separate tensors makes
// it structurally impossible for learned weights to mix x/y/z.
struct VarField {
  std::array<ad::Var, 3> axis;
};

inline VarField field_constant(ad::Tape& tape, const VectorField& z) {
  VarField f;
  for (int a = 0; a < 3; ++a) f.axis[a] = tape.constant(Tensor::from_eigen(z.axis[a]));
  return f;
}

inline VectorField field_value(const VarField& f) {
  VectorField z;
  for (int a = 0; a < 3; ++a) z.axis[a] = f.axis[a].tape->val(f.axis[a]).to_eigen();
  return z;
}

// Directed edge lists (both orientations of every undirected edge) plus the
// per-node inverse degree used to average neighbor contributions. Isolated
// nodes get inverse degree zero, which skips their coordinate update.
struct EdgeIndex {
  std::vector<int> dst, src;
  Tensor inv_deg;  // N x 1
  int num_nodes = 0;

  static EdgeIndex build(const MolecularGraph& g) {
    EdgeIndex e;
    e.num_nodes = g.num_nodes;
    for (const auto& [i, j] : g.edges) {
      e.dst.push_back(i);
      e.src.push_back(j);
      e.dst.push_back(j);
      e.src.push_back(i);
    }
    e.inv_deg = Tensor::zeros({g.num_nodes, 1});
    const auto deg = g.degrees();
    for (int i = 0; i < g.num_nodes; ++i)
      if (deg[i] > 0) e.inv_deg.at(i, 0) = 1.0 / deg[i];
    return e;
  }
};

// Rotation- and translation-invariant per-atom inputs: (||v_i||, Z_i/z_max).
inline Tensor raw_features(const MolecularFrame& frame, double z_max) {
  if (z_max <= 0) throw InvalidArgumentError("z_max must be positive");
  frame.validate();
  const int n = frame.num_atoms();
  Tensor raw({n, 2});
  for (int i = 0; i < n; ++i) {
    raw.at(i, 0) = frame.velocities.row(i).norm();
    raw.at(i, 1) = frame.atomic_numbers[i] / z_max;
  }
  return raw;
}

// h0 = embed([||v||, Z/z_max]); z0 channels are (position, velocity).
inline std::pair<ad::Var, VarField> init_features(ad::Tape& tape, const VarModel& model,
                                                  const MolecularFrame& frame) {
  using namespace ad;
  Var raw = tape.constant(raw_features(frame, model.dims.z_max));
  Var h0 = linear(raw, model.embed_W, model.embed_b);
  VarField z0 = field_constant(tape, VectorField::from_frame(frame.positions, frame.velocities));
  return {h0, z0};
}

// One stack of message-passing layers (encoder or decoder, depending on the
// parameter set). Messages are conditioned on squared edge length only, and
// all coordinate/velocity updates move along relative vectors, so scalars
// stay invariant and vectors transform exactly under rotations/translations.
inline std::pair<ad::Var, VarField> codec_apply(const VarCodec& codec, ad::Var h, VarField z,
                                                const EdgeIndex& e) {
  using namespace ad;
  ad::Tape& tape = *h.tape;
  const int N = e.num_nodes;
  const int m = tape.val(z.axis[0]).cols();

  for (const VarCodecLayer& layer : codec.layers) {
    if (e.dst.empty()) {
      // no edges: message sums are zero, coordinates pass through
      Var zeros = tape.constant(Tensor::zeros({N, tape.val(layer.phi_e.b.back()).cols()}));
      h = apply_mlp(layer.phi_h, concat({h, zeros}, 1), false);
      continue;
    }

    Var hi = gather_rows(h, e.dst);
    Var hj = gather_rows(h, e.src);

    std::array<Var, 3> rx, rv;
    std::array<Var, 3> xcol, vcol;
    for (int a = 0; a < 3; ++a) {
      xcol[a] = slice(z.axis[a], 0, N, 0, 1);
      rx[a] = sub(gather_rows(xcol[a], e.dst), gather_rows(xcol[a], e.src));
      if (m > 1) {
        vcol[a] = slice(z.axis[a], 0, N, 1, 1);
        rv[a] = sub(gather_rows(vcol[a], e.dst), gather_rows(vcol[a], e.src));
      }
    }
    Var sq = add(add(square(rx[0]), square(rx[1])), square(rx[2]));

    Var msg = apply_mlp(layer.phi_e, concat({hi, hj, sq}, 1), true);
    Var msum = scatter_add_rows(msg, e.dst, N);
    Var h_new = apply_mlp(layer.phi_h, concat({h, msum}, 1), false);

    Var gate_x = apply_mlp(layer.psi_x, msg, false);  // E x 1
    Var gate_v;
    Var vscale;
    if (m > 1) {
      gate_v = apply_mlp(layer.psi_v, msg, false);
      vscale = linear(h, layer.vgate_W, layer.vgate_b);  // N x 1
    }

    for (int a = 0; a < 3; ++a) {
      Var dx = mul_const(scatter_add_rows(mul(rx[a], gate_x), e.dst, N), e.inv_deg);
      Var x_new = add(xcol[a], dx);
      if (m > 1) {
        Var dv = mul_const(scatter_add_rows(mul(rv[a], gate_v), e.dst, N), e.inv_deg);
        Var v_new = add(add(vcol[a], mul(vcol[a], vscale)), dv);
        std::vector<Var> cols{x_new, v_new};
        for (int c = 2; c < m; ++c) cols.push_back(slice(z.axis[a], 0, N, c, 1));
        z.axis[a] = concat(cols, 1);
      } else {
        z.axis[a] = x_new;
      }
    }
    h = h_new;
  }
  return {h, z};
}

// Plain-value encoder: embedding followed by the encoder layers.
inline std::pair<Eigen::MatrixXd, VectorField> encode(const MolecularFrame& frame,
                                                      const MolecularGraph& graph,
                                                      const ModelParams& params) {
  ad::Tape tape;
  VarModel mv = lift(tape, params, false);
  auto [h0, z0] = init_features(tape, mv, frame);
  auto e = EdgeIndex::build(graph);
  auto [h, z] = codec_apply(mv.encoder, h0, z0, e);
  return {tape.val(h).to_eigen(), field_value(z)};
}

// Plain-value decoder refinement with the primed parameter set.
inline std::pair<Eigen::MatrixXd, VectorField> decode(const Eigen::MatrixXd& h,
                                                      const VectorField& z,
                                                      const MolecularGraph& graph,
                                                      const ModelParams& params) {
  ad::Tape tape;
  VarModel mv = lift(tape, params, false);
  auto e = EdgeIndex::build(graph);
  ad::Var hv = tape.constant(Tensor::from_eigen(h));
  auto [h2, z2] = codec_apply(mv.decoder, hv, field_constant(tape, z), e);
  return {tape.val(h2).to_eigen(), field_value(z2)};
}

}  // namespace gfnode
