#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "gfnode/common.hpp"

namespace gfnode {

// One trajectory snapshot: positions/velocities in angstroms, one row per atom.
struct MolecularFrame {
  Eigen::MatrixXd positions;   // N x 3
  Eigen::MatrixXd velocities;  // N x 3
  std::vector<int> atomic_numbers;
  double timestamp = 0.0;

  int num_atoms() const { return static_cast<int>(positions.rows()); }

  void validate() const {
    const int n = num_atoms();
    if (n < 1) throw InvalidInputError("frame must contain at least one atom");
    if (velocities.rows() != n || positions.cols() != 3 || velocities.cols() != 3)
      throw InvalidInputError("positions and velocities must both be N x 3");
    if (static_cast<int>(atomic_numbers.size()) != n)
      throw InvalidInputError("atomic_numbers length must match atom count");
    for (int z : atomic_numbers)
      if (z < 1) throw InvalidInputError("atomic numbers must be >= 1");
  }
};

// Undirected simple graph over atoms; an edge exists iff the pairwise
// distance was strictly below the cutoff at construction time.
struct MolecularGraph {
  int num_nodes = 0;
  std::vector<std::pair<int, int>> edges;  // i < j, no duplicates, no self-loops
  double cutoff = 0.0;

  std::vector<int> degrees() const {
    std::vector<int> deg(num_nodes, 0);
    for (const auto& [i, j] : edges) {
      ++deg[i];
      ++deg[j];
    }
    return deg;
  }

  std::vector<std::vector<int>> adjacency() const {
    std::vector<std::vector<int>> adj(num_nodes);
    for (const auto& [i, j] : edges) {
      adj[i].push_back(j);
      adj[j].push_back(i);
    }
    return adj;
  }

  bool connected() const {
    if (num_nodes == 0) return false;
    const auto adj = adjacency();
    std::vector<char> seen(num_nodes, 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int count = 1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int v : adj[u])
        if (!seen[v]) {
          seen[v] = 1;
          ++count;
          stack.push_back(v);
        }
    }
    return count == num_nodes;
  }
};

// Orthonormal eigenbasis of the graph Laplacian, eigenvalues ascending.
struct LaplacianSpectrum {
  Eigen::MatrixXd eigenvectors;  // N x N, column k = u_k
  Eigen::VectorXd eigenvalues;   // ascending

  int size() const { return static_cast<int>(eigenvalues.size()); }
};

inline MolecularGraph build_graph(const MolecularFrame& frame, double cutoff) {
  frame.validate();
  if (cutoff <= 0) throw InvalidArgumentError("cutoff must be positive");
  if (!frame.positions.allFinite())
    throw InvalidInputError("positions contain non-finite coordinates");

  MolecularGraph g;
  g.num_nodes = frame.num_atoms();
  g.cutoff = cutoff;
  for (int i = 0; i < g.num_nodes; ++i)
    for (int j = i + 1; j < g.num_nodes; ++j)
      if ((frame.positions.row(i) - frame.positions.row(j)).norm() < cutoff)
        g.edges.emplace_back(i, j);
  return g;
}

// L = D - A (unnormalized).
inline Eigen::MatrixXd laplacian(const MolecularGraph& graph) {
  if (graph.num_nodes < 1) throw InvalidInputError("graph must have at least one node");
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(graph.num_nodes, graph.num_nodes);
  for (const auto& [i, j] : graph.edges) {
    if (i == j || i < 0 || j >= graph.num_nodes)
      throw InvalidInputError("graph contains an invalid edge");
    L(i, j) -= 1.0;
    L(j, i) -= 1.0;
    L(i, i) += 1.0;
    L(j, j) += 1.0;
  }
  return L;
}

// Symmetric eigendecomposition with a fixed sign convention: each
// eigenvector is flipped so its largest-magnitude entry is positive
// (ties broken by lowest index). Eigenvalues come back ascending.
inline LaplacianSpectrum eig_decompose(const Eigen::MatrixXd& L) {
  if (L.rows() != L.cols()) throw InvalidInputError("matrix must be square");
  if ((L - L.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw InvalidInputError("matrix must be symmetric");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(L);
  if (solver.info() != Eigen::Success)
    throw NumericalError("eigendecomposition failed to converge");

  LaplacianSpectrum spec;
  spec.eigenvalues = solver.eigenvalues();
  spec.eigenvectors = solver.eigenvectors();
  for (int k = 0; k < spec.size(); ++k) {
    int arg = 0;
    double best = std::abs(spec.eigenvectors(0, k));
    for (int i = 1; i < spec.size(); ++i) {
      const double m = std::abs(spec.eigenvectors(i, k));
      if (m > best) {
        best = m;
        arg = i;
      }
    }
    if (spec.eigenvectors(arg, k) < 0) spec.eigenvectors.col(k) = -spec.eigenvectors.col(k);
  }
  return spec;
}

}  // namespace gfnode
