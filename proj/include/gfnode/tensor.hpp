#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <initializer_list>
#include <numeric>
#include <ostream>
#include <vector>

#include "gfnode/common.hpp"

namespace gfnode {

// Dense row-major tensor of doubles. Rank is arbitrary but almost all of the
// model math treats tensors as matrices (rank 2); scalars are shape {1, 1}.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}
  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int>(data.size()) != numel_of(shape))
      throw InvalidArgumentError("tensor data length does not match shape");
  }

  static int numel_of(const std::vector<int>& s) {
    int n = 1;
    for (int d : s) {
      if (d <= 0) throw InvalidArgumentError("tensor dimensions must be positive");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }

  int numel() const { return static_cast<int>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const {
    if (shape.size() < 2) return 1;
    int c = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) c *= shape[i];
    return c;
  }

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

  double item() const {
    if (numel() != 1) throw InvalidArgumentError("item() requires a one-element tensor");
    return data[0];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }

  static Tensor from_eigen(const Eigen::MatrixXd& m) {
    Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) t.at(i, j) = m(i, j);
    return t;
  }

  Eigen::MatrixXd to_eigen() const {
    Eigen::MatrixXd m(rows(), cols());
    for (int i = 0; i < rows(); ++i)
      for (int j = 0; j < cols(); ++j) m(i, j) = at(i, j);
    return m;
  }
};

inline std::ostream& operator<<(std::ostream& os, const Tensor& t) {
  os << "Tensor[";
  for (std::size_t i = 0; i < t.shape.size(); ++i) os << (i ? "x" : "") << t.shape[i];
  os << "](";
  const int n = std::min(t.numel(), 8);
  for (int i = 0; i < n; ++i) os << (i ? ", " : "") << t.data[i];
  if (t.numel() > n) os << ", ...";
  return os << ")";
}

}  // namespace gfnode
