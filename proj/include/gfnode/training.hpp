#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "gfnode/model.hpp"

namespace gfnode {

struct TrainConfig {
  enum class Sampling { irregular, regular };

  double learning_rate = 1e-4;
  double weight_decay = 1e-15;
  int batch_size = 50;
  int seq_len = 8;   // K, targets per instance
  int delta_t = 3000;  // frame-index horizon per instance
  int epochs = 5000;
  int steps_per_epoch = 1;
  std::uint64_t seed = 0;
  Sampling sampling = Sampling::irregular;

  void validate() const {
    if (seq_len < 1) throw InvalidArgumentError("seq_len must be >= 1");
    if (delta_t < seq_len) throw InvalidArgumentError("delta_t must be >= seq_len");
    if (learning_rate <= 0) throw InvalidArgumentError("learning_rate must be positive");
    if (batch_size < 1 || epochs < 0 || steps_per_epoch < 1)
      throw InvalidArgumentError("batch_size and steps_per_epoch must be >= 1");
    if (weight_decay < 0) throw InvalidArgumentError("weight_decay must be non-negative");
  }
};

struct Trajectory {
  std::string name;
  std::vector<MolecularFrame> frames;

  int num_frames() const { return static_cast<int>(frames.size()); }
  int num_atoms() const { return frames.empty() ? 0 : frames.front().num_atoms(); }

  void validate() const {
    if (frames.empty()) throw InvalidInputError("trajectory has no frames");
    frames.front().validate();
    for (std::size_t i = 1; i < frames.size(); ++i) {
      frames[i].validate();
      if (frames[i].num_atoms() != frames.front().num_atoms())
        throw InvalidInputError("trajectory frames disagree on atom count");
      if (frames[i].atomic_numbers != frames.front().atomic_numbers)
        throw InvalidInputError("trajectory frames disagree on atomic numbers");
      if (frames[i].timestamp <= frames[i - 1].timestamp)
        throw InvalidInputError("trajectory timestamps must be strictly increasing");
    }
  }
};

// One training instance: an anchor frame plus K strictly increasing target
// frame indices drawn from the (0, delta_t] window after it.
struct TrainInstance {
  int t0_index = 0;
  std::vector<int> target_indices;
};

inline TrainInstance sample_instance(const Trajectory& traj, const TrainConfig& config,
                                     Rng& rng) {
  config.validate();
  const int len = traj.num_frames();
  if (len < config.delta_t + 1)
    throw InvalidInputError("trajectory too short for the configured delta_t");

  TrainInstance inst;
  inst.t0_index = static_cast<int>(rng.below(len - config.delta_t));

  const int K = config.seq_len, dT = config.delta_t;
  std::vector<int> offsets;
  if (config.sampling == TrainConfig::Sampling::regular) {
    for (int k = 1; k <= K; ++k)
      offsets.push_back(static_cast<int>(std::llround(static_cast<double>(dT) * k / K)));
  } else {
    std::set<int> chosen;
    while (static_cast<int>(chosen.size()) < K)
      chosen.insert(1 + static_cast<int>(rng.below(dT)));
    offsets.assign(chosen.begin(), chosen.end());
  }
  for (int off : offsets) inst.target_indices.push_back(inst.t0_index + off);
  return inst;
}

// Mean over time points and atoms of the squared position error.
inline double mse_loss(const std::vector<Eigen::MatrixXd>& pred,
                       const std::vector<Eigen::MatrixXd>& truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw InvalidArgumentError("mse_loss: prediction/truth size mismatch");
  const int N = static_cast<int>(pred[0].rows());
  double acc = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (pred[k].rows() != N || pred[k].rows() != truth[k].rows() || pred[k].cols() != 3 ||
        truth[k].cols() != 3)
      throw InvalidArgumentError("mse_loss: frames must share an N x 3 shape");
    acc += (pred[k] - truth[k]).squaredNorm();
  }
  return acc / (static_cast<double>(N) * pred.size());
}

// ---- optimizer -----------------------------------------------------------------

// Adam with decoupled weight decay; moments are kept per parameter tensor.
struct AdamState {
  std::vector<Tensor> m, v;
  long step = 0;

  static AdamState init(ModelParams& params) {
    AdamState s;
    for (Tensor* t : params.flat()) {
      s.m.push_back(Tensor::zeros(t->shape));
      s.v.push_back(Tensor::zeros(t->shape));
    }
    return s;
  }
};

struct Adam {
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void update(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
              AdamState& state) const {
    if (params.size() != grads.size() || params.size() != state.m.size())
      throw InvalidArgumentError("adam: parameter/gradient/state count mismatch");
    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      const Tensor& g = grads[i];
      for (int j = 0; j < p.numel(); ++j) {
        double& mj = state.m[i].data[j];
        double& vj = state.v[i].data[j];
        mj = beta1 * mj + (1.0 - beta1) * g.data[j];
        vj = beta2 * vj + (1.0 - beta2) * g.data[j] * g.data[j];
        const double mhat = mj / bc1;
        const double vhat = vj / bc2;
        p.data[j] -= learning_rate * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p.data[j]);
      }
    }
  }
};

// ---- end-to-end training step ----------------------------------------------------

namespace train_detail {

// Normalized target offsets for one instance: the delta_t window maps to
// (0, 1] using the actual frame timestamps.
inline std::vector<double> normalized_offsets(const Trajectory& traj, const TrainInstance& inst,
                                              int delta_t) {
  const double t0 = traj.frames[inst.t0_index].timestamp;
  const double span = traj.frames[inst.t0_index + delta_t].timestamp - t0;
  std::vector<double> rel;
  for (int idx : inst.target_indices)
    rel.push_back((traj.frames[idx].timestamp - t0) / span);
  return rel;
}

// Taped forward producing the position MSE against the instance targets.
inline ad::Var instance_loss(ad::Tape& tape, const VarModel& model, const Trajectory& traj,
                             const TrainInstance& inst, const PipelineConfig& pipeline,
                             int delta_t) {
  using namespace ad;
  const MolecularFrame& frame0 = traj.frames[inst.t0_index];
  auto graph = build_graph(frame0, pipeline.cutoff);
  auto spectrum = eig_decompose(laplacian(graph));
  auto rel = normalized_offsets(traj, inst, delta_t);
  auto fw = forward_taped(tape, model, frame0, graph, spectrum, rel, pipeline.train_substeps);

  const int N = frame0.num_atoms();
  const int K = static_cast<int>(rel.size());
  Var acc;
  for (int k = 0; k < K; ++k) {
    const MolecularFrame& target = traj.frames[inst.target_indices[k]];
    for (int a = 0; a < 3; ++a) {
      Var pred_col = slice(fw.z[k].axis[a], 0, N, 0, 1);
      Var truth_col = tape.constant(Tensor::from_eigen(target.positions.col(a)));
      Var sq = sum(square(sub(pred_col, truth_col)));
      acc = (k == 0 && a == 0) ? sq : add(acc, sq);
    }
  }
  return scale(acc, 1.0 / (static_cast<double>(N) * K));
}

}  // namespace train_detail

// One optimizer step over a batch of instances. Throws NumericalError and
// leaves parameters untouched if the loss turns non-finite.
inline double train_step(const Trajectory& traj, const std::vector<TrainInstance>& batch,
                         ModelParams& params, AdamState& opt_state, const TrainConfig& config,
                         const PipelineConfig& pipeline) {
  config.validate();
  if (batch.empty()) throw InvalidArgumentError("train_step: empty batch");
  for (Tensor* t : params.flat())
    if (!t->all_finite()) throw NumericalError("train_step: parameters are non-finite");

  std::vector<Tensor> grads;
  for (Tensor* t : params.flat()) grads.push_back(Tensor::zeros(t->shape));

  double total_loss = 0.0;
  const double inv_b = 1.0 / batch.size();
  for (const TrainInstance& inst : batch) {
    ad::Tape tape;
    VarModel mv = lift(tape, params, true);
    ad::Var loss = train_detail::instance_loss(tape, mv, traj, inst, pipeline, config.delta_t);
    total_loss += tape.val(loss).item() * inv_b;
    tape.backward(ad::scale(loss, inv_b));
    for (std::size_t i = 0; i < mv.flat.size(); ++i) {
      const Tensor& g = tape.grad(mv.flat[i]);
      for (int j = 0; j < g.numel(); ++j) grads[i].data[j] += g.data[j];
    }
  }

  if (!std::isfinite(total_loss))
    throw NumericalError("train_step: non-finite loss; parameters unchanged");

  Adam opt;
  opt.learning_rate = config.learning_rate;
  opt.weight_decay = config.weight_decay;
  opt.update(params.flat(), grads, opt_state);
  return total_loss;
}

// Loss of a fixed instance set without touching parameters (validation).
inline double evaluate(const Trajectory& traj, const std::vector<TrainInstance>& instances,
                       const ModelParams& params, const TrainConfig& config,
                       const PipelineConfig& pipeline) {
  double total = 0.0;
  for (const TrainInstance& inst : instances) {
    ad::Tape tape;
    VarModel mv = lift(tape, params, false);
    ad::Var loss = train_detail::instance_loss(tape, mv, traj, inst, pipeline, config.delta_t);
    total += tape.val(loss).item();
  }
  return total / instances.size();
}

struct FitResult {
  std::vector<double> train_losses;  // one per epoch (mean over steps)
  std::vector<double> val_losses;
  double best_val = std::numeric_limits<double>::infinity();
};

using ImprovementHook =
    std::function<void(int epoch, double val_loss, const ModelParams&, const AdamState&)>;

// Seeded training loop; checkpointing is delegated to the hook, which fires
// whenever the validation loss improves.
inline FitResult fit(const Trajectory& traj, ModelParams& params, AdamState& opt_state,
                     const TrainConfig& config, const PipelineConfig& pipeline,
                     int val_instances = 4, const ImprovementHook& on_improve = nullptr) {
  traj.validate();
  config.validate();
  Rng rng(config.seed);
  Rng val_rng(config.seed ^ 0xABCDEF1234567890ULL);

  std::vector<TrainInstance> val_set;
  for (int i = 0; i < val_instances; ++i) val_set.push_back(sample_instance(traj, config, val_rng));

  FitResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int step = 0; step < config.steps_per_epoch; ++step) {
      std::vector<TrainInstance> batch;
      for (int b = 0; b < config.batch_size; ++b)
        batch.push_back(sample_instance(traj, config, rng));
      epoch_loss += train_step(traj, batch, params, opt_state, config, pipeline);
    }
    result.train_losses.push_back(epoch_loss / config.steps_per_epoch);

    const double val = evaluate(traj, val_set, params, config, pipeline);
    result.val_losses.push_back(val);
    if (val < result.best_val) {
      result.best_val = val;
      if (on_improve) on_improve(epoch, val, params, opt_state);
    }
  }
  return result;
}

}  // namespace gfnode
