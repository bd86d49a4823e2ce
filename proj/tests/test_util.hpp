#pragma once

#include <Eigen/Dense>
#include <vector>

#include "gfnode/common.hpp"
#include "gfnode/graph.hpp"

namespace testutil {

// Random simple graph on n nodes: a random spanning tree (guarantees
// connectivity) plus a few extra random edges.
inline gfnode::MolecularGraph random_connected_graph(gfnode::Rng& rng, int n) {
  gfnode::MolecularGraph g;
  g.num_nodes = n;
  g.cutoff = 0.0;
  std::vector<std::pair<int, int>> seen;
  for (int i = 1; i < n; ++i) {
    const int j = static_cast<int>(rng.below(i));
    g.edges.emplace_back(j, i);
  }
  const int extra = n > 2 ? static_cast<int>(rng.below(n)) : 0;
  for (int e = 0; e < extra; ++e) {
    int i = static_cast<int>(rng.below(n));
    int j = static_cast<int>(rng.below(n));
    if (i == j) continue;
    if (i > j) std::swap(i, j);
    bool dup = false;
    for (const auto& [a, b] : g.edges)
      if (a == i && b == j) dup = true;
    if (!dup) g.edges.emplace_back(i, j);
  }
  return g;
}

inline gfnode::MolecularGraph path_graph(int n) {
  gfnode::MolecularGraph g;
  g.num_nodes = n;
  for (int i = 0; i + 1 < n; ++i) g.edges.emplace_back(i, i + 1);
  return g;
}

inline Eigen::VectorXd random_vector(gfnode::Rng& rng, int n) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

inline Eigen::MatrixXd random_matrix(gfnode::Rng& rng, int r, int c) {
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

// Uniform random rotation from a normalized quaternion.
inline Eigen::Matrix3d random_rotation(gfnode::Rng& rng) {
  Eigen::Vector4d q;
  for (int i = 0; i < 4; ++i) q[i] = rng.normal();
  q.normalize();
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return R;
}

}  // namespace testutil
