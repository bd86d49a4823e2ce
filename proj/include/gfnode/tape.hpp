#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "gfnode/tensor.hpp"

namespace gfnode::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

class Tape;

// Lightweight handle to a tape node.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Records primitive ops for reverse-mode differentiation. Nodes live in a
// deque so storage stays stable as ops append. Backward walks nodes in exact
// reverse creation order, which is a valid reverse topological order because
// inputs always precede outputs; gradient accumulation is additive.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad = false) {
    return make(std::move(value), requires_grad, nullptr);
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var make(Tensor value, bool requires_grad, std::function<void(Tape&)> bwd) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.bwd = std::move(bwd);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor& val(const Var& v) const { return nodes_[v.id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  Tensor& grad_buf(int id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor::zeros(n.value.shape);
      n.has_grad = true;
    }
    return n.grad;
  }

  // Zero tensor if the node never received a gradient.
  const Tensor& grad(const Var& v) { return grad_buf(v.id); }

  void backward(const Var& root) {
    if (val(root).numel() != 1)
      throw InvalidArgumentError("backward requires a scalar root");
    grad_buf(root.id).data[0] += 1.0;
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.has_grad && n.bwd) n.bwd(*this);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::function<void(Tape&)> bwd;
  };
  std::deque<Node> nodes_;
};

namespace detail {

inline Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape != b.tape) throw InvalidArgumentError("vars belong to different tapes");
  return *a.tape;
}

inline bool needs(const Var& a) { return a.tape->requires_grad(a.id); }

inline MapRM map(Tensor& t) { return MapRM(t.data.data(), t.rows(), t.cols()); }
inline CMapRM map(const Tensor& t) { return CMapRM(t.data.data(), t.rows(), t.cols()); }

}  // namespace detail

// ---- elementwise arithmetic -------------------------------------------------

inline Var add(Var a, Var b) {
  Tape& tp = detail::tape_of(a, b);
  const Tensor& av = tp.val(a);
  const Tensor& bv = tp.val(b);
  if (!av.same_shape(bv)) throw InvalidArgumentError("add: shape mismatch");
  Tensor out = av;
  for (int i = 0; i < out.numel(); ++i) out.data[i] += bv.data[i];
  const bool na = detail::needs(a), nb = detail::needs(b);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na || nb) {
    bwd = [oid, aid = a.id, bid = b.id, na, nb](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      if (na) {
        Tensor& ga = t.grad_buf(aid);
        for (int i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
      }
      if (nb) {
        Tensor& gb = t.grad_buf(bid);
        for (int i = 0; i < g.numel(); ++i) gb.data[i] += g.data[i];
      }
    };
  }
  return tp.make(std::move(out), na || nb, std::move(bwd));
}

inline Var sub(Var a, Var b) {
  Tape& tp = detail::tape_of(a, b);
  const Tensor& av = tp.val(a);
  const Tensor& bv = tp.val(b);
  if (!av.same_shape(bv)) throw InvalidArgumentError("sub: shape mismatch");
  Tensor out = av;
  for (int i = 0; i < out.numel(); ++i) out.data[i] -= bv.data[i];
  const bool na = detail::needs(a), nb = detail::needs(b);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na || nb) {
    bwd = [oid, aid = a.id, bid = b.id, na, nb](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      if (na) {
        Tensor& ga = t.grad_buf(aid);
        for (int i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
      }
      if (nb) {
        Tensor& gb = t.grad_buf(bid);
        for (int i = 0; i < g.numel(); ++i) gb.data[i] -= g.data[i];
      }
    };
  }
  return tp.make(std::move(out), na || nb, std::move(bwd));
}

inline Var mul(Var a, Var b) {
  Tape& tp = detail::tape_of(a, b);
  const Tensor& av = tp.val(a);
  const Tensor& bv = tp.val(b);
  if (!av.same_shape(bv)) throw InvalidArgumentError("mul: shape mismatch");
  Tensor out = av;
  for (int i = 0; i < out.numel(); ++i) out.data[i] *= bv.data[i];
  const bool na = detail::needs(a), nb = detail::needs(b);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na || nb) {
    bwd = [oid, aid = a.id, bid = b.id, na, nb](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      const Tensor& av2 = t.val(Var{&t, aid});
      const Tensor& bv2 = t.val(Var{&t, bid});
      if (na) {
        Tensor& ga = t.grad_buf(aid);
        for (int i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i] * bv2.data[i];
      }
      if (nb) {
        Tensor& gb = t.grad_buf(bid);
        for (int i = 0; i < g.numel(); ++i) gb.data[i] += g.data[i] * av2.data[i];
      }
    };
  }
  return tp.make(std::move(out), na || nb, std::move(bwd));
}

inline Var neg(Var a) {
  Tape& tp = *a.tape;
  Tensor out = tp.val(a);
  for (double& v : out.data) v = -v;
  const bool na = detail::needs(a);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na) {
    bwd = [oid, aid = a.id](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      Tensor& ga = t.grad_buf(aid);
      for (int i = 0; i < g.numel(); ++i) ga.data[i] -= g.data[i];
    };
  }
  return tp.make(std::move(out), na, std::move(bwd));
}

inline Var scale(Var a, double s) {
  Tape& tp = *a.tape;
  Tensor out = tp.val(a);
  for (double& v : out.data) v *= s;
  const bool na = detail::needs(a);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na) {
    bwd = [oid, aid = a.id, s](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      Tensor& ga = t.grad_buf(aid);
      for (int i = 0; i < g.numel(); ++i) ga.data[i] += s * g.data[i];
    };
  }
  return tp.make(std::move(out), na, std::move(bwd));
}

inline Var add_const(Var a, double c) {
  Tape& tp = *a.tape;
  Tensor out = tp.val(a);
  for (double& v : out.data) v += c;
  const bool na = detail::needs(a);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na) {
    bwd = [oid, aid = a.id](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      Tensor& ga = t.grad_buf(aid);
      for (int i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
    };
  }
  return tp.make(std::move(out), na, std::move(bwd));
}

// ---- linear algebra ---------------------------------------------------------

inline Var matmul(Var a, Var b) {
  Tape& tp = detail::tape_of(a, b);
  const Tensor& av = tp.val(a);
  const Tensor& bv = tp.val(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0])
    throw InvalidArgumentError("matmul: incompatible shapes");
  Tensor out({av.shape[0], bv.shape[1]});
  detail::map(out) = detail::map(av) * detail::map(bv);
  const bool na = detail::needs(a), nb = detail::needs(b);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na || nb) {
    bwd = [oid, aid = a.id, bid = b.id, na, nb](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      const Tensor& av2 = t.val(Var{&t, aid});
      const Tensor& bv2 = t.val(Var{&t, bid});
      if (na) {
        Tensor& ga = t.grad_buf(aid);
        detail::map(ga) += detail::map(g) * detail::map(bv2).transpose();
      }
      if (nb) {
        Tensor& gb = t.grad_buf(bid);
        detail::map(gb) += detail::map(av2).transpose() * detail::map(g);
      }
    };
  }
  return tp.make(std::move(out), na || nb, std::move(bwd));
}

inline Var transpose(Var a) {
  Tape& tp = *a.tape;
  const Tensor& av = tp.val(a);
  if (av.rank() != 2) throw InvalidArgumentError("transpose: rank-2 tensor required");
  Tensor out({av.shape[1], av.shape[0]});
  detail::map(out) = detail::map(av).transpose();
  const bool na = detail::needs(a);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na) {
    bwd = [oid, aid = a.id](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      Tensor& ga = t.grad_buf(aid);
      detail::map(ga) += detail::map(g).transpose();
    };
  }
  return tp.make(std::move(out), na, std::move(bwd));
}

inline Var reshape(Var a, std::vector<int> shape) {
  Tape& tp = *a.tape;
  const Tensor& av = tp.val(a);
  if (Tensor::numel_of(shape) != av.numel())
    throw InvalidArgumentError("reshape: element count mismatch");
  Tensor out(std::move(shape), av.data);
  const bool na = detail::needs(a);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na) {
    bwd = [oid, aid = a.id](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      Tensor& ga = t.grad_buf(aid);
      for (int i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
    };
  }
  return tp.make(std::move(out), na, std::move(bwd));
}

// ---- structural ops (rank 2) -------------------------------------------------

// Concatenate matrices along axis 0 (rows) or 1 (columns).
inline Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw InvalidArgumentError("concat: empty input");
  Tape& tp = *parts[0].tape;
  if (axis != 0 && axis != 1) throw InvalidArgumentError("concat: axis must be 0 or 1");
  int rows = tp.val(parts[0]).rows(), cols = tp.val(parts[0]).cols();
  int total = 0;
  bool rg = false;
  for (const Var& p : parts) {
    const Tensor& v = tp.val(p);
    if (v.rank() != 2) throw InvalidArgumentError("concat: rank-2 tensors required");
    if (axis == 0 && v.cols() != cols) throw InvalidArgumentError("concat: column mismatch");
    if (axis == 1 && v.rows() != rows) throw InvalidArgumentError("concat: row mismatch");
    total += (axis == 0) ? v.rows() : v.cols();
    rg = rg || detail::needs(p);
  }
  Tensor out(axis == 0 ? std::vector<int>{total, cols} : std::vector<int>{rows, total});
  int off = 0;
  for (const Var& p : parts) {
    const Tensor& v = tp.val(p);
    if (axis == 0) {
      detail::map(out).middleRows(off, v.rows()) = detail::map(v);
      off += v.rows();
    } else {
      detail::map(out).middleCols(off, v.cols()) = detail::map(v);
      off += v.cols();
    }
  }
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (rg) {
    std::vector<int> ids;
    for (const Var& p : parts) ids.push_back(p.id);
    bwd = [oid, ids, axis](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      int off2 = 0;
      for (int pid : ids) {
        Tensor& gp = t.grad_buf(pid);
        const int nr = gp.rows(), nc = gp.cols();
        if (axis == 0) {
          detail::map(gp) += detail::map(g).middleRows(off2, nr);
          off2 += nr;
        } else {
          detail::map(gp) += detail::map(g).middleCols(off2, nc);
          off2 += nc;
        }
      }
    };
  }
  return tp.make(std::move(out), rg, std::move(bwd));
}

inline Var slice(Var a, int row0, int nrows, int col0, int ncols) {
  Tape& tp = *a.tape;
  const Tensor& av = tp.val(a);
  if (av.rank() != 2) throw InvalidArgumentError("slice: rank-2 tensor required");
  if (row0 < 0 || col0 < 0 || row0 + nrows > av.rows() || col0 + ncols > av.cols())
    throw InvalidArgumentError("slice: range out of bounds");
  Tensor out({nrows, ncols});
  detail::map(out) = detail::map(av).block(row0, col0, nrows, ncols);
  const bool na = detail::needs(a);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na) {
    bwd = [oid, aid = a.id, row0, nrows, col0, ncols](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      Tensor& ga = t.grad_buf(aid);
      detail::map(ga).block(row0, col0, nrows, ncols) += detail::map(g);
    };
  }
  return tp.make(std::move(out), na, std::move(bwd));
}

inline Var rows(Var a, int row0, int nrows) {
  return slice(a, row0, nrows, 0, a.tape->val(a).cols());
}

// Expand {1,1}, {1,C} or {R,1} to {R,C}; backward sums over expanded axes.
inline Var broadcast(Var a, int R, int C) {
  Tape& tp = *a.tape;
  const Tensor& av = tp.val(a);
  if (av.rank() != 2) throw InvalidArgumentError("broadcast: rank-2 tensor required");
  const int ar = av.rows(), ac = av.cols();
  if (!((ar == R || ar == 1) && (ac == C || ac == 1)))
    throw InvalidArgumentError("broadcast: incompatible shapes");
  Tensor out({R, C});
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < C; ++j) out.at(i, j) = av.at(ar == 1 ? 0 : i, ac == 1 ? 0 : j);
  const bool na = detail::needs(a);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na) {
    bwd = [oid, aid = a.id, R, C, ar, ac](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      Tensor& ga = t.grad_buf(aid);
      for (int i = 0; i < R; ++i)
        for (int j = 0; j < C; ++j) ga.at(ar == 1 ? 0 : i, ac == 1 ? 0 : j) += g.at(i, j);
    };
  }
  return tp.make(std::move(out), na, std::move(bwd));
}

// ---- reductions --------------------------------------------------------------

inline Var sum(Var a) {
  Tape& tp = *a.tape;
  const Tensor& av = tp.val(a);
  double s = 0;
  for (double v : av.data) s += v;
  const bool na = detail::needs(a);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na) {
    bwd = [oid, aid = a.id](Tape& t) {
      const double g = t.grad_buf(oid).data[0];
      Tensor& ga = t.grad_buf(aid);
      for (double& v : ga.data) v += g;
    };
  }
  return tp.make(Tensor::scalar(s), na, std::move(bwd));
}

inline Var mean(Var a) {
  Var s = sum(a);
  return scale(s, 1.0 / a.tape->val(a).numel());
}

// Column sums: {R,C} -> {1,C}.
inline Var sum_rows(Var a) {
  Tape& tp = *a.tape;
  const Tensor& av = tp.val(a);
  if (av.rank() != 2) throw InvalidArgumentError("sum_rows: rank-2 tensor required");
  Tensor out({1, av.cols()});
  detail::map(out) = detail::map(av).colwise().sum();
  const bool na = detail::needs(a);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na) {
    bwd = [oid, aid = a.id](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      Tensor& ga = t.grad_buf(aid);
      for (int i = 0; i < ga.rows(); ++i)
        for (int j = 0; j < ga.cols(); ++j) ga.at(i, j) += g.at(0, j);
    };
  }
  return tp.make(std::move(out), na, std::move(bwd));
}

// Row sums: {R,C} -> {R,1}.
inline Var sum_cols(Var a) {
  Tape& tp = *a.tape;
  const Tensor& av = tp.val(a);
  if (av.rank() != 2) throw InvalidArgumentError("sum_cols: rank-2 tensor required");
  Tensor out({av.rows(), 1});
  detail::map(out) = detail::map(av).rowwise().sum();
  const bool na = detail::needs(a);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na) {
    bwd = [oid, aid = a.id](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      Tensor& ga = t.grad_buf(aid);
      for (int i = 0; i < ga.rows(); ++i)
        for (int j = 0; j < ga.cols(); ++j) ga.at(i, j) += g.at(i, 0);
    };
  }
  return tp.make(std::move(out), na, std::move(bwd));
}

inline Var mean_rows(Var a) { return scale(sum_rows(a), 1.0 / a.tape->val(a).rows()); }

// ---- nonlinearities ------------------------------------------------------------

inline Var silu(Var a) {
  Tape& tp = *a.tape;
  const Tensor& av = tp.val(a);
  Tensor out = av;
  for (double& v : out.data) v = v / (1.0 + std::exp(-v));
  const bool na = detail::needs(a);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na) {
    bwd = [oid, aid = a.id](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      const Tensor& x = t.val(Var{&t, aid});
      Tensor& ga = t.grad_buf(aid);
      for (int i = 0; i < g.numel(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x.data[i]));
        ga.data[i] += g.data[i] * s * (1.0 + x.data[i] * (1.0 - s));
      }
    };
  }
  return tp.make(std::move(out), na, std::move(bwd));
}

inline Var relu(Var a) {
  Tape& tp = *a.tape;
  Tensor out = tp.val(a);
  for (double& v : out.data) v = v > 0 ? v : 0.0;
  const bool na = detail::needs(a);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na) {
    bwd = [oid, aid = a.id](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      const Tensor& x = t.val(Var{&t, aid});
      Tensor& ga = t.grad_buf(aid);
      for (int i = 0; i < g.numel(); ++i) ga.data[i] += x.data[i] > 0 ? g.data[i] : 0.0;
    };
  }
  return tp.make(std::move(out), na, std::move(bwd));
}

inline Var exp(Var a) {
  Tape& tp = *a.tape;
  Tensor out = tp.val(a);
  for (double& v : out.data) v = std::exp(v);
  const bool na = detail::needs(a);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na) {
    bwd = [oid, aid = a.id](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      const Tensor& yv = t.val(Var{&t, oid});
      Tensor& ga = t.grad_buf(aid);
      for (int i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i] * yv.data[i];
    };
  }
  return tp.make(std::move(out), na, std::move(bwd));
}

inline Var square(Var a) {
  Tape& tp = *a.tape;
  Tensor out = tp.val(a);
  for (double& v : out.data) v = v * v;
  const bool na = detail::needs(a);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na) {
    bwd = [oid, aid = a.id](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      const Tensor& x = t.val(Var{&t, aid});
      Tensor& ga = t.grad_buf(aid);
      for (int i = 0; i < g.numel(); ++i) ga.data[i] += 2.0 * x.data[i] * g.data[i];
    };
  }
  return tp.make(std::move(out), na, std::move(bwd));
}

// Square root; the derivative at exactly zero is defined as zero to keep
// zero-velocity inputs from poisoning gradients with infinities.
inline Var sqrt(Var a) {
  Tape& tp = *a.tape;
  Tensor out = tp.val(a);
  for (double& v : out.data) v = std::sqrt(v);
  const bool na = detail::needs(a);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na) {
    bwd = [oid, aid = a.id](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      const Tensor& yv = t.val(Var{&t, oid});
      Tensor& ga = t.grad_buf(aid);
      for (int i = 0; i < g.numel(); ++i)
        if (yv.data[i] != 0.0) ga.data[i] += 0.5 * g.data[i] / yv.data[i];
    };
  }
  return tp.make(std::move(out), na, std::move(bwd));
}

// Row-wise softmax over the last dimension of a matrix.
inline Var softmax(Var a) {
  Tape& tp = *a.tape;
  const Tensor& av = tp.val(a);
  if (av.rank() != 2) throw InvalidArgumentError("softmax: rank-2 tensor required");
  Tensor out = av;
  for (int i = 0; i < out.rows(); ++i) {
    double mx = out.at(i, 0);
    for (int j = 1; j < out.cols(); ++j) mx = std::max(mx, out.at(i, j));
    double s = 0;
    for (int j = 0; j < out.cols(); ++j) {
      out.at(i, j) = std::exp(out.at(i, j) - mx);
      s += out.at(i, j);
    }
    for (int j = 0; j < out.cols(); ++j) out.at(i, j) /= s;
  }
  const bool na = detail::needs(a);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na) {
    bwd = [oid, aid = a.id](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      const Tensor& y = t.val(Var{&t, oid});
      Tensor& ga = t.grad_buf(aid);
      for (int i = 0; i < g.rows(); ++i) {
        double dot = 0;
        for (int j = 0; j < g.cols(); ++j) dot += g.at(i, j) * y.at(i, j);
        for (int j = 0; j < g.cols(); ++j)
          ga.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
      }
    };
  }
  return tp.make(std::move(out), na, std::move(bwd));
}

// ---- gather / scatter ----------------------------------------------------------

// Selects rows of a matrix: out[e] = a[idx[e]].
inline Var gather_rows(Var a, std::vector<int> idx) {
  Tape& tp = *a.tape;
  const Tensor& av = tp.val(a);
  if (av.rank() != 2) throw InvalidArgumentError("gather_rows: rank-2 tensor required");
  for (int i : idx)
    if (i < 0 || i >= av.rows()) throw InvalidArgumentError("gather_rows: index out of range");
  Tensor out({static_cast<int>(idx.size()), av.cols()});
  for (std::size_t e = 0; e < idx.size(); ++e)
    for (int j = 0; j < av.cols(); ++j) out.at(static_cast<int>(e), j) = av.at(idx[e], j);
  const bool na = detail::needs(a);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na) {
    bwd = [oid, aid = a.id, idx](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      Tensor& ga = t.grad_buf(aid);
      for (std::size_t e = 0; e < idx.size(); ++e)
        for (int j = 0; j < g.cols(); ++j) ga.at(idx[e], j) += g.at(static_cast<int>(e), j);
    };
  }
  return tp.make(std::move(out), na, std::move(bwd));
}

// Accumulates rows into a matrix of n_rows rows: out[idx[e]] += a[e].
inline Var scatter_add_rows(Var a, std::vector<int> idx, int n_rows) {
  Tape& tp = *a.tape;
  const Tensor& av = tp.val(a);
  if (av.rank() != 2) throw InvalidArgumentError("scatter_add_rows: rank-2 tensor required");
  if (static_cast<int>(idx.size()) != av.rows())
    throw InvalidArgumentError("scatter_add_rows: index count must match rows");
  for (int i : idx)
    if (i < 0 || i >= n_rows) throw InvalidArgumentError("scatter_add_rows: index out of range");
  Tensor out({n_rows, av.cols()});
  for (std::size_t e = 0; e < idx.size(); ++e)
    for (int j = 0; j < av.cols(); ++j) out.at(idx[e], j) += av.at(static_cast<int>(e), j);
  const bool na = detail::needs(a);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na) {
    bwd = [oid, aid = a.id, idx](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      Tensor& ga = t.grad_buf(aid);
      for (std::size_t e = 0; e < idx.size(); ++e)
        for (int j = 0; j < g.cols(); ++j) ga.at(static_cast<int>(e), j) += g.at(idx[e], j);
    };
  }
  return tp.make(std::move(out), na, std::move(bwd));
}

// Elementwise multiply by a fixed (non-differentiated) tensor.
inline Var mul_const(Var a, const Tensor& c) {
  Tape& tp = *a.tape;
  const Tensor& av = tp.val(a);
  if (!av.same_shape(c)) throw InvalidArgumentError("mul_const: shape mismatch");
  Tensor out = av;
  for (int i = 0; i < out.numel(); ++i) out.data[i] *= c.data[i];
  const bool na = detail::needs(a);
  std::function<void(Tape&)> bwd;
  const int oid = static_cast<int>(tp.size());
  if (na) {
    bwd = [oid, aid = a.id, c](Tape& t) {
      const Tensor g = t.grad_buf(oid);
      Tensor& ga = t.grad_buf(aid);
      for (int i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i] * c.data[i];
    };
  }
  return tp.make(std::move(out), na, std::move(bwd));
}

// ---- convenience ------------------------------------------------------------

// x @ W + b with b broadcast over rows. b may be invalid to skip the bias.
inline Var linear(Var x, Var W, Var b) {
  Var y = matmul(x, W);
  if (!b.valid()) return y;
  const Tensor& yv = x.tape->val(y);
  return add(y, broadcast(b, yv.rows(), yv.cols()));
}

// max over coordinates of |g_ad - g_fd| / max(1, |g_fd|), comparing the
// reverse-mode gradient against central finite differences.
inline double grad_check(
    const std::function<Var(Tape&, const std::vector<Var>&)>& f,
    const std::vector<Tensor>& params, double eps) {
  if (eps < 1e-6 || eps > 1e-3) throw InvalidArgumentError("grad_check: eps out of range");

  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(tape.leaf(p, true));
  Var loss = f(tape, vars);
  tape.backward(loss);
  std::vector<Tensor> g_ad;
  g_ad.reserve(vars.size());
  for (const Var& v : vars) g_ad.push_back(tape.grad(v));

  auto eval = [&](const std::vector<Tensor>& theta) {
    Tape t2;
    std::vector<Var> vs;
    vs.reserve(theta.size());
    for (const Tensor& p : theta) vs.push_back(t2.leaf(p, false));
    return t2.val(f(t2, vs)).item();
  };

  std::vector<Tensor> theta = params;
  double max_rel = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    for (int j = 0; j < theta[i].numel(); ++j) {
      const double orig = theta[i].data[j];
      theta[i].data[j] = orig + eps;
      const double fp = eval(theta);
      theta[i].data[j] = orig - eps;
      const double fm = eval(theta);
      theta[i].data[j] = orig;
      const double fd = (fp - fm) / (2.0 * eps);
      const double rel = std::abs(g_ad[i].data[j] - fd) / std::max(1.0, std::abs(fd));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace gfnode::ad
