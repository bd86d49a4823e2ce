#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gfnode/common.hpp"
#include "gfnode/tensor.hpp"

namespace gfnode {

struct ModelDims {
  int hidden = 64;     // F, scalar feature width
  int modes = 8;       // M, retained spectral modes
  int channels = 2;    // m, vector channels (position, velocity)
  int time_dim = 8;    // d, time embedding width
  int heads = 2;       // attention heads (must divide widths)
  int depth = 2;       // encoder/decoder message-passing layers
  double z_max = 9.0;  // atomic-number normalizer

  void validate() const {
    if (hidden < 1 || modes < 1 || channels < 1 || time_dim < 1 || depth < 1)
      throw InvalidArgumentError("model dimensions must be positive");
    if (heads < 1 || hidden % heads != 0 || channels % heads != 0)
      throw InvalidArgumentError("head count must divide both attention widths");
    if (z_max <= 0) throw InvalidArgumentError("z_max must be positive");
  }
};

struct MlpParams {
  std::vector<Tensor> W;  // layer i: in x out
  std::vector<Tensor> b;  // layer i: 1 x out
};

struct CodecLayerParams {
  MlpParams phi_e;  // (2F+1) -> F -> F
  MlpParams phi_h;  // 2F -> F -> F
  MlpParams psi_x;  // F -> F -> 1, scalar gate on relative positions
  MlpParams psi_v;  // F -> F -> 1, scalar gate on relative velocities
  Tensor vgate_W;   // F x 1, velocity rescale head
  Tensor vgate_b;   // 1 x 1
};

struct CodecParams {
  std::vector<CodecLayerParams> layers;
};

struct AttentionParams {
  Tensor Wq, Wk, Wv, Wo;  // width x width
  Tensor bq, bk, bv, bo;  // 1 x width; unused when biased == false
  bool biased = true;
};

struct SpectralOdeParams {
  AttentionParams attn_scalar;        // width F, biased
  AttentionParams attn_vector;        // width m, bias-free
  Tensor time_W, time_b;              // 1 x d each
  std::vector<Tensor> mode_W_scalar;  // per mode: (F+d) x F
  std::vector<Tensor> mode_b_scalar;  // per mode: 1 x F
  std::vector<Tensor> mode_W_vector;  // per mode: (m+d) x m
};

// All learnable tensors. Enumeration order is the canonical order used for
// gradient reduction and checkpoint payloads.
struct ModelParams {
  ModelDims dims;
  Tensor embed_W, embed_b;  // 2 x F, 1 x F
  CodecParams encoder, decoder;
  SpectralOdeParams node;

  template <class Fn>
  void for_each(Fn&& fn) {
    fn("embed.W", embed_W);
    fn("embed.b", embed_b);
    auto walk_mlp = [&](const std::string& base, MlpParams& mlp) {
      for (std::size_t i = 0; i < mlp.W.size(); ++i) {
        fn(base + ".W" + std::to_string(i), mlp.W[i]);
        fn(base + ".b" + std::to_string(i), mlp.b[i]);
      }
    };
    auto walk_codec = [&](const std::string& base, CodecParams& c) {
      for (std::size_t l = 0; l < c.layers.size(); ++l) {
        const std::string p = base + ".l" + std::to_string(l);
        walk_mlp(p + ".phi_e", c.layers[l].phi_e);
        walk_mlp(p + ".phi_h", c.layers[l].phi_h);
        walk_mlp(p + ".psi_x", c.layers[l].psi_x);
        walk_mlp(p + ".psi_v", c.layers[l].psi_v);
        fn(p + ".vgate.W", c.layers[l].vgate_W);
        fn(p + ".vgate.b", c.layers[l].vgate_b);
      }
    };
    walk_codec("enc", encoder);
    walk_codec("dec", decoder);
    auto walk_attn = [&](const std::string& base, AttentionParams& a) {
      fn(base + ".Wq", a.Wq);
      fn(base + ".Wk", a.Wk);
      fn(base + ".Wv", a.Wv);
      fn(base + ".Wo", a.Wo);
      if (a.biased) {
        fn(base + ".bq", a.bq);
        fn(base + ".bk", a.bk);
        fn(base + ".bv", a.bv);
        fn(base + ".bo", a.bo);
      }
    };
    walk_attn("node.attn_h", node.attn_scalar);
    walk_attn("node.attn_z", node.attn_vector);
    fn("node.time.W", node.time_W);
    fn("node.time.b", node.time_b);
    for (std::size_t k = 0; k < node.mode_W_scalar.size(); ++k) {
      const std::string p = "node.mode" + std::to_string(k);
      fn(p + ".Wh", node.mode_W_scalar[k]);
      fn(p + ".bh", node.mode_b_scalar[k]);
      fn(p + ".Wz", node.mode_W_vector[k]);
    }
  }

  template <class Fn>
  void for_each(Fn&& fn) const {
    const_cast<ModelParams*>(this)->for_each(
        [&fn](const std::string& name, Tensor& t) { fn(name, static_cast<const Tensor&>(t)); });
  }

  std::vector<Tensor*> flat() {
    std::vector<Tensor*> out;
    for_each([&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
  }

  std::vector<std::string> names() {
    std::vector<std::string> out;
    for_each([&](const std::string& n, Tensor&) { out.push_back(n); });
    return out;
  }

  // Standard initialization: Xavier-uniform projections, zero biases, and
  // zeroed gate/mode output weights so the untrained pipeline starts as the
  // identity map on coordinates.
  static ModelParams init(const ModelDims& dims, Rng& rng) {
    dims.validate();
    ModelParams p;
    p.dims = dims;
    const int F = dims.hidden, M = dims.modes, m = dims.channels, d = dims.time_dim;

    auto xavier = [&rng](int in, int out) {
      Tensor t({in, out});
      const double s = std::sqrt(6.0 / (in + out));
      for (double& v : t.data) v = rng.uniform(-s, s);
      return t;
    };
    auto zeros = [](int in, int out) { return Tensor::zeros({in, out}); };

    auto mlp = [&](int in, int hid, int out, bool zero_last) {
      MlpParams mp;
      mp.W = {xavier(in, hid), zero_last ? zeros(hid, out) : xavier(hid, out)};
      mp.b = {zeros(1, hid), zeros(1, out)};
      return mp;
    };
    auto codec = [&] {
      CodecParams c;
      for (int l = 0; l < dims.depth; ++l) {
        CodecLayerParams layer;
        layer.phi_e = mlp(2 * F + 1, F, F, false);
        layer.phi_h = mlp(2 * F, F, F, false);
        layer.psi_x = mlp(F, F, 1, true);
        layer.psi_v = mlp(F, F, 1, true);
        layer.vgate_W = zeros(F, 1);
        layer.vgate_b = zeros(1, 1);
        c.layers.push_back(std::move(layer));
      }
      return c;
    };

    p.embed_W = xavier(2, F);
    p.embed_b = zeros(1, F);
    p.encoder = codec();
    p.decoder = codec();

    auto attn = [&](int width, bool biased) {
      AttentionParams a;
      a.Wq = xavier(width, width);
      a.Wk = xavier(width, width);
      a.Wv = xavier(width, width);
      a.Wo = xavier(width, width);
      a.biased = biased;
      if (biased) {
        a.bq = zeros(1, width);
        a.bk = zeros(1, width);
        a.bv = zeros(1, width);
        a.bo = zeros(1, width);
      }
      return a;
    };
    p.node.attn_scalar = attn(F, true);
    p.node.attn_vector = attn(m, false);
    p.node.time_W = xavier(1, d);
    p.node.time_b = zeros(1, d);
    for (int k = 0; k < M; ++k) {
      p.node.mode_W_scalar.push_back(zeros(F + d, F));
      p.node.mode_b_scalar.push_back(zeros(1, F));
      p.node.mode_W_vector.push_back(zeros(m + d, m));
    }
    return p;
  }

  // Overwrites every tensor with scaled normal noise (tests use this to get
  // a fully non-degenerate parameter point).
  void randomize(Rng& rng, double scale) {
    for_each([&](const std::string&, Tensor& t) {
      for (double& v : t.data) v = scale * rng.normal();
    });
  }

  void zero_all() {
    for_each([](const std::string&, Tensor& t) {
      std::fill(t.data.begin(), t.data.end(), 0.0);
    });
  }
};

}  // namespace gfnode
