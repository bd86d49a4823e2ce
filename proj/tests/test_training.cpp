#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "gfnode/synthetic.hpp"
#include "gfnode/training.hpp"
#include "test_util.hpp"

using namespace gfnode;

namespace {

Trajectory index_trajectory(int length) {
  Trajectory t;
  for (int i = 0; i < length; ++i) {
    MolecularFrame f;
    f.positions = Eigen::MatrixXd::Zero(1, 3);
    f.positions(0, 0) = 0.01 * i;
    f.velocities = Eigen::MatrixXd::Zero(1, 3);
    f.atomic_numbers = {6};
    f.timestamp = i;
    t.frames.push_back(std::move(f));
  }
  return t;
}

ModelParams chain_params(Rng& rng, int modes = 5, int hidden = 16, int depth = 1) {
  ModelDims dims;
  dims.hidden = hidden;
  dims.modes = modes;
  dims.time_dim = 4;
  dims.heads = 2;
  dims.depth = depth;
  dims.z_max = 9.0;
  return ModelParams::init(dims, rng);
}

void zero_geometry_path(ModelParams& p) {
  for (CodecParams* c : {&p.encoder, &p.decoder})
    for (auto& layer : c->layers) {
      std::fill(layer.psi_x.W.back().data.begin(), layer.psi_x.W.back().data.end(), 0.0);
      std::fill(layer.psi_x.b.back().data.begin(), layer.psi_x.b.back().data.end(), 0.0);
      std::fill(layer.psi_v.W.back().data.begin(), layer.psi_v.W.back().data.end(), 0.0);
      std::fill(layer.psi_v.b.back().data.begin(), layer.psi_v.b.back().data.end(), 0.0);
      std::fill(layer.vgate_W.data.begin(), layer.vgate_W.data.end(), 0.0);
      std::fill(layer.vgate_b.data.begin(), layer.vgate_b.data.end(), 0.0);
    }
  for (auto& w : p.node.mode_W_scalar) std::fill(w.data.begin(), w.data.end(), 0.0);
  for (auto& b : p.node.mode_b_scalar) std::fill(b.data.begin(), b.data.end(), 0.0);
  for (auto& w : p.node.mode_W_vector) std::fill(w.data.begin(), w.data.end(), 0.0);
}

}  // namespace

TEST_CASE("sample_instance offsets", "[training]") {
  auto traj = index_trajectory(3200);

  SECTION("K = 1 regular lands on delta_t") {
    TrainConfig cfg;
    cfg.seq_len = 1;
    cfg.delta_t = 3000;
    cfg.sampling = TrainConfig::Sampling::regular;
    Rng rng(1);
    auto inst = sample_instance(traj, cfg, rng);
    REQUIRE(inst.target_indices.size() == 1);
    REQUIRE(inst.target_indices[0] - inst.t0_index == 3000);
  }

  SECTION("K = 8 regular is the arithmetic sequence") {
    TrainConfig cfg;
    cfg.seq_len = 8;
    cfg.delta_t = 3000;
    cfg.sampling = TrainConfig::Sampling::regular;
    Rng rng(2);
    auto inst = sample_instance(traj, cfg, rng);
    for (int k = 1; k <= 8; ++k)
      REQUIRE(inst.target_indices[k - 1] - inst.t0_index == 375 * k);
  }

  SECTION("irregular draws are strictly increasing and within (0, delta_t]") {
    TrainConfig cfg;
    cfg.seq_len = 8;
    cfg.delta_t = 3000;
    Rng rng(3);
    for (int trial = 0; trial < 10000; ++trial) {
      auto inst = sample_instance(traj, cfg, rng);
      int prev = inst.t0_index;
      for (int idx : inst.target_indices) {
        REQUIRE(idx > prev);
        REQUIRE(idx - inst.t0_index <= 3000);
        prev = idx;
      }
    }
  }

  SECTION("deterministic under a fixed seed") {
    TrainConfig cfg;
    cfg.seq_len = 8;
    cfg.delta_t = 100;
    Rng a(7), b(7);
    auto traj2 = index_trajectory(200);
    for (int i = 0; i < 50; ++i) {
      auto ia = sample_instance(traj2, cfg, a);
      auto ib = sample_instance(traj2, cfg, b);
      REQUIRE(ia.t0_index == ib.t0_index);
      REQUIRE(ia.target_indices == ib.target_indices);
    }
  }

  SECTION("too-short trajectory is rejected") {
    TrainConfig cfg;
    cfg.seq_len = 2;
    cfg.delta_t = 500;
    Rng rng(4);
    auto short_traj = index_trajectory(400);
    REQUIRE_THROWS_AS(sample_instance(short_traj, cfg, rng), InvalidInputError);
  }
}

TEST_CASE("mse_loss formula", "[training]") {
  SECTION("identical inputs give zero") {
    Eigen::MatrixXd a = Eigen::MatrixXd::Random(4, 3);
    REQUIRE(mse_loss({a}, {a}) == 0.0);
  }

  SECTION("single atom, single time, error (1,2,2) gives 9") {
    Eigen::MatrixXd p(1, 3), t(1, 3);
    p << 1, 2, 2;
    t << 0, 0, 0;
    REQUIRE(mse_loss({p}, {t}) == Catch::Approx(9.0));
  }

  SECTION("two atoms, one with unit error, K = 1 gives 0.5") {
    Eigen::MatrixXd p(2, 3), t(2, 3);
    p << 1, 0, 0, 0, 0, 0;
    t.setZero();
    REQUIRE(mse_loss({p}, {t}) == Catch::Approx(0.5));
  }

  SECTION("non-negative, zero iff equal") {
    Rng rng(5);
    Eigen::MatrixXd t = testutil::random_matrix(rng, 3, 3);
    Eigen::MatrixXd p = t;
    p(1, 1) += 1e-9;
    REQUIRE(mse_loss({p}, {t}) > 0.0);
  }
}

TEST_CASE("adam optimizer", "[training]") {
  SECTION("zero learning rate leaves parameters bitwise unchanged") {
    Rng rng(6);
    ModelParams p = chain_params(rng, 3, 8);
    p.randomize(rng, 0.3);
    ModelParams copy = p;
    AdamState state = AdamState::init(p);

    std::vector<Tensor> grads;
    for (Tensor* t : p.flat()) {
      Tensor g = Tensor::zeros(t->shape);
      for (double& v : g.data) v = rng.normal();
      grads.push_back(std::move(g));
    }
    Adam opt;
    opt.learning_rate = 0.0;
    opt.update(p.flat(), grads, state);

    auto flat_a = p.flat();
    auto flat_b = copy.flat();
    for (std::size_t i = 0; i < flat_a.size(); ++i)
      REQUIRE(flat_a[i]->data == flat_b[i]->data);
  }

  SECTION("quadratic loss converges to the minimum") {
    Tensor theta = Tensor::scalar(0.0);
    std::vector<Tensor*> params{&theta};
    AdamState state;
    state.m.push_back(Tensor::zeros({1, 1}));
    state.v.push_back(Tensor::zeros({1, 1}));
    Adam opt;
    opt.learning_rate = 1e-2;
    int steps = 0;
    for (; steps < 5000; ++steps) {
      if (std::abs(theta.item() - 3.0) < 1e-3) break;
      Tensor g = Tensor::scalar(2.0 * (theta.item() - 3.0));
      opt.update(params, {g}, state);
    }
    REQUIRE(std::abs(theta.item() - 3.0) < 1e-3);
    REQUIRE(steps < 5000);
  }
}

TEST_CASE("train_step updates parameters and reports the loss", "[training]") {
  Rng rng(7);
  auto traj = gen_harmonic_chain(4, 1.0, 0.05, 160, 0.25);
  ModelParams params = chain_params(rng, 4, 8);
  AdamState opt = AdamState::init(params);

  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 2;
  cfg.seq_len = 2;
  cfg.delta_t = 40;
  PipelineConfig pipe;
  pipe.cutoff = 1.6;
  pipe.time_scale = 40.0;

  Rng sampler(8);
  std::vector<TrainInstance> batch;
  for (int i = 0; i < 2; ++i) batch.push_back(sample_instance(traj, cfg, sampler));

  ModelParams before = params;
  const double loss = train_step(traj, batch, params, opt, cfg, pipe);
  REQUIRE(std::isfinite(loss));
  REQUIRE(loss > 0.0);

  bool changed = false;
  auto fa = params.flat();
  auto fb = before.flat();
  for (std::size_t i = 0; i < fa.size() && !changed; ++i)
    changed = fa[i]->data != fb[i]->data;
  REQUIRE(changed);

  SECTION("non-finite parameters are rejected up front") {
    params.embed_W.data[0] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(train_step(traj, batch, params, opt, cfg, pipe), NumericalError);
  }
}

TEST_CASE("full training loss gradient matches finite differences", "[training]") {
  Rng rng(9);
  auto traj = gen_harmonic_chain(4, 1.0, 0.05, 60, 0.25);

  ModelDims dims;
  dims.hidden = 4;
  dims.modes = 3;
  dims.time_dim = 2;
  dims.heads = 1;
  dims.depth = 1;
  ModelParams params = ModelParams::init(dims, rng);
  params.randomize(rng, 0.3);

  TrainConfig cfg;
  cfg.seq_len = 2;
  cfg.delta_t = 20;
  PipelineConfig pipe;
  pipe.cutoff = 1.6;
  pipe.time_scale = 20.0;
  pipe.train_substeps = 4;

  Rng sampler(10);
  TrainInstance inst = sample_instance(traj, cfg, sampler);

  std::vector<Tensor> flat_vals;
  params.for_each([&](const std::string&, const Tensor& t) { flat_vals.push_back(t); });

  auto f = [&](ad::Tape& tape, const std::vector<ad::Var>& vs) {
    ModelParams local = params;
    std::size_t i = 0;
    local.for_each([&](const std::string&, Tensor& t) { t = tape.val(vs[i++]); });
    VarModel mv = lift(tape, local, false);
    mv.flat = vs;
    // rebuild handle structure over vs in canonical order
    std::size_t j = 0;
    auto take = [&] { return vs[j++]; };
    mv.embed_W = take();
    mv.embed_b = take();
    for (VarCodec* c : {&mv.encoder, &mv.decoder})
      for (auto& layer : c->layers) {
        for (auto* mlp : {&layer.phi_e, &layer.phi_h, &layer.psi_x, &layer.psi_v})
          for (std::size_t l = 0; l < mlp->W.size(); ++l) {
            mlp->W[l] = take();
            mlp->b[l] = take();
          }
        layer.vgate_W = take();
        layer.vgate_b = take();
      }
    for (VarAttention* a : {&mv.node.attn_scalar, &mv.node.attn_vector}) {
      a->Wq = take();
      a->Wk = take();
      a->Wv = take();
      a->Wo = take();
      if (a->biased) {
        a->bq = take();
        a->bk = take();
        a->bv = take();
        a->bo = take();
      }
    }
    mv.node.time_W = take();
    mv.node.time_b = take();
    for (std::size_t k = 0; k < mv.node.mode_W_scalar.size(); ++k) {
      mv.node.mode_W_scalar[k] = take();
      mv.node.mode_b_scalar[k] = take();
      mv.node.mode_W_vector[k] = take();
    }
    REQUIRE(j == vs.size());
    return train_detail::instance_loss(tape, mv, traj, inst, pipe, cfg.delta_t);
  };

  REQUIRE(ad::grad_check(f, flat_vals, 1e-4) < 1e-3);
}

TEST_CASE("predict with zeroed dynamics is the identity at t0", "[training]") {
  Rng rng(11);
  auto traj = gen_harmonic_chain(4, 1.0, 0.05, 10, 0.2);
  ModelParams params = chain_params(rng, 4, 8);  // M = N
  zero_geometry_path(params);

  PipelineConfig pipe;
  pipe.cutoff = 1.6;
  pipe.time_scale = 10.0;
  const auto& f0 = traj.frames[0];
  auto frames = predict(f0, {f0.timestamp}, params, pipe);
  REQUIRE(frames.size() == 1);
  REQUIRE((frames[0].positions - f0.positions).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("predict supports arbitrary continuous times", "[training]") {
  Rng rng(12);
  auto traj = gen_harmonic_chain(4, 1.0, 0.05, 80, 0.2);
  ModelParams params = chain_params(rng, 4, 8);
  params.randomize(rng, 0.2);

  PipelineConfig pipe;
  pipe.cutoff = 1.6;
  pipe.time_scale = 40.0;
  std::vector<double> times;
  for (int k = 1; k <= 8; ++k) times.push_back(5.0 * k);  // finer than any training grid
  auto frames = predict(traj.frames[0], times, params, pipe);
  REQUIRE(frames.size() == 8);
  for (const auto& f : frames) REQUIRE(f.positions.allFinite());

  // continuity between neighbouring requested times
  auto a = predict(traj.frames[0], {20.0}, params, pipe);
  auto b = predict(traj.frames[0], {20.0 + 1e-7}, params, pipe);
  REQUIRE((a[0].positions - b[0].positions).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("training reduces the loss on a harmonic chain", "[training]") {
  Rng rng(13);
  auto traj = gen_harmonic_chain(5, 1.0, 0.05, 600, 0.3);
  ModelParams params = chain_params(rng, 5, 16);
  AdamState opt = AdamState::init(params);

  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 4;
  cfg.seq_len = 4;
  cfg.delta_t = 100;
  cfg.epochs = 40;
  cfg.steps_per_epoch = 2;
  cfg.seed = 99;
  PipelineConfig pipe;
  pipe.cutoff = 1.6;
  pipe.time_scale = 100.0;

  auto result = fit(traj, params, opt, cfg, pipe, 2);
  REQUIRE(result.train_losses.size() == 40);
  REQUIRE(result.train_losses.back() < 0.6 * result.train_losses.front());
}

TEST_CASE("training is deterministic for a fixed seed", "[training]") {
  auto run = [] {
    Rng rng(14);
    auto traj = gen_harmonic_chain(4, 1.0, 0.05, 200, 0.25);
    ModelParams params = chain_params(rng, 4, 8);
    AdamState opt = AdamState::init(params);
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 2;
    cfg.seq_len = 2;
    cfg.delta_t = 50;
    cfg.epochs = 3;
    cfg.seed = 42;
    PipelineConfig pipe;
    pipe.cutoff = 1.6;
    pipe.time_scale = 50.0;
    return fit(traj, params, opt, cfg, pipe, 2).train_losses;
  };
  auto a = run(), b = run();
  REQUIRE(a == b);
}

TEST_CASE("predict is equivariant and translation consistent", "[training]") {
  Rng rng(15);
  auto traj = gen_harmonic_chain(5, 1.0, 0.05, 60, 0.25);
  ModelParams params = chain_params(rng, 5, 8);
  params.randomize(rng, 0.25);

  PipelineConfig pipe;
  pipe.cutoff = 1.6;
  pipe.time_scale = 30.0;
  pipe.solver.method = OdeMethod::rk4;
  pipe.solver.initial_step = 0.05;

  const auto& f0 = traj.frames[0];
  std::vector<double> times = {10.0, 30.0};
  auto base = predict(f0, times, params, pipe);

  SECTION("rotation + translation") {
    for (int trial = 0; trial < 3; ++trial) {
      Eigen::Matrix3d R = testutil::random_rotation(rng);
      Eigen::Vector3d t(rng.normal(), rng.normal(), rng.normal());
      MolecularFrame g = f0;
      g.positions = (f0.positions * R.transpose()).rowwise() + t.transpose();
      g.velocities = f0.velocities * R.transpose();
      auto moved = predict(g, times, params, pipe);
      for (std::size_t k = 0; k < times.size(); ++k) {
        Eigen::MatrixXd want =
            (base[k].positions * R.transpose()).rowwise() + t.transpose();
        REQUIRE((moved[k].positions - want).cwiseAbs().maxCoeff() < 1e-6);
      }
    }
  }

  SECTION("pure translation is exact to 1e-8") {
    Eigen::Vector3d t(3.0, -1.0, 0.5);
    MolecularFrame g = f0;
    g.positions = f0.positions.rowwise() + t.transpose();
    auto moved = predict(g, times, params, pipe);
    for (std::size_t k = 0; k < times.size(); ++k) {
      Eigen::MatrixXd want = base[k].positions.rowwise() + t.transpose();
      REQUIRE((moved[k].positions - want).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
}
