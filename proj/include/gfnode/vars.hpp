#pragma once

#include <vector>

#include "gfnode/params.hpp"
#include "gfnode/tape.hpp"

namespace gfnode {

// Tape-resident mirrors of the parameter structs.

struct VarMlp {
  std::vector<ad::Var> W, b;
};

struct VarCodecLayer {
  VarMlp phi_e, phi_h, psi_x, psi_v;
  ad::Var vgate_W, vgate_b;
};

struct VarCodec {
  std::vector<VarCodecLayer> layers;
};

struct VarAttention {
  ad::Var Wq, Wk, Wv, Wo;
  ad::Var bq, bk, bv, bo;  // invalid handles when bias-free
  bool biased = true;
};

struct VarSpectralOde {
  VarAttention attn_scalar, attn_vector;
  ad::Var time_W, time_b;
  std::vector<ad::Var> mode_W_scalar, mode_b_scalar, mode_W_vector;
};

struct VarModel {
  ModelDims dims;
  ad::Var embed_W, embed_b;
  VarCodec encoder, decoder;
  VarSpectralOde node;

  // Vars in ModelParams::for_each order, for gradient collection.
  std::vector<ad::Var> flat;
};

// Places every parameter tensor on the tape. The traversal order must match
// ModelParams::for_each; the mapping is rebuilt here structurally and the
// flat list doubles as a consistency check (one Var per tensor).
inline VarModel lift(ad::Tape& tape, const ModelParams& const_params, bool requires_grad) {
  auto& params = const_cast<ModelParams&>(const_params);  // tensors are copied onto the tape
  VarModel mv;
  mv.dims = params.dims;

  auto put = [&](Tensor& t) {
    ad::Var v = tape.leaf(t, requires_grad);
    mv.flat.push_back(v);
    return v;
  };
  auto lift_mlp = [&](MlpParams& mp) {
    VarMlp vm;
    for (std::size_t i = 0; i < mp.W.size(); ++i) {
      vm.W.push_back(put(mp.W[i]));
      vm.b.push_back(put(mp.b[i]));
    }
    return vm;
  };
  auto lift_codec = [&](CodecParams& c) {
    VarCodec vc;
    for (auto& layer : c.layers) {
      VarCodecLayer vl;
      vl.phi_e = lift_mlp(layer.phi_e);
      vl.phi_h = lift_mlp(layer.phi_h);
      vl.psi_x = lift_mlp(layer.psi_x);
      vl.psi_v = lift_mlp(layer.psi_v);
      vl.vgate_W = put(layer.vgate_W);
      vl.vgate_b = put(layer.vgate_b);
      vc.layers.push_back(std::move(vl));
    }
    return vc;
  };
  auto lift_attn = [&](AttentionParams& a) {
    VarAttention va;
    va.biased = a.biased;
    va.Wq = put(a.Wq);
    va.Wk = put(a.Wk);
    va.Wv = put(a.Wv);
    va.Wo = put(a.Wo);
    if (a.biased) {
      va.bq = put(a.bq);
      va.bk = put(a.bk);
      va.bv = put(a.bv);
      va.bo = put(a.bo);
    }
    return va;
  };

  mv.embed_W = put(params.embed_W);
  mv.embed_b = put(params.embed_b);
  mv.encoder = lift_codec(params.encoder);
  mv.decoder = lift_codec(params.decoder);
  mv.node.attn_scalar = lift_attn(params.node.attn_scalar);
  mv.node.attn_vector = lift_attn(params.node.attn_vector);
  mv.node.time_W = put(params.node.time_W);
  mv.node.time_b = put(params.node.time_b);
  for (std::size_t k = 0; k < params.node.mode_W_scalar.size(); ++k) {
    mv.node.mode_W_scalar.push_back(put(params.node.mode_W_scalar[k]));
    mv.node.mode_b_scalar.push_back(put(params.node.mode_b_scalar[k]));
    mv.node.mode_W_vector.push_back(put(params.node.mode_W_vector[k]));
  }
  return mv;
}

// Applies an MLP with SiLU between layers; final_act adds SiLU after the
// last layer as well.
inline ad::Var apply_mlp(const VarMlp& mlp, ad::Var x, bool final_act) {
  using namespace ad;
  for (std::size_t i = 0; i < mlp.W.size(); ++i) {
    x = linear(x, mlp.W[i], mlp.b[i]);
    if (i + 1 < mlp.W.size() || final_act) x = silu(x);
  }
  return x;
}

}  // namespace gfnode
