// SPDX-License-Identifier: Apache-2.0
#include "adimp/ot/emd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace adimp::ot {
namespace {

constexpr double kFeasTol = 1e-9;
constexpr double kReducedTol = 1e-11;

// Basis cells form a spanning tree on the bipartite node set
// {row_0..row_{m-1}} u {col_0..col_{n-1}}. Tree queries work on an adjacency
// list rebuilt after each pivot; instances here are small enough that the
// rebuild cost is irrelevant next to the reduced-cost scan.
struct Basis {
  int m, n;
  std::vector<std::vector<int>> cells;  // per row: sorted col indices
  std::vector<double> flow;             // m*n dense, nonzero only on basis

  Basis(int m_, int n_) : m(m_), n(n_), cells(m_), flow(static_cast<size_t>(m_) * n_, 0.0) {}

  bool contains(int i, int j) const {
    const auto& r = cells[static_cast<size_t>(i)];
    return std::binary_search(r.begin(), r.end(), j);
  }
  void insert(int i, int j) {
    auto& r = cells[static_cast<size_t>(i)];
    r.insert(std::upper_bound(r.begin(), r.end(), j), j);
  }
  void erase(int i, int j) {
    auto& r = cells[static_cast<size_t>(i)];
    r.erase(std::lower_bound(r.begin(), r.end(), j));
  }
  double& f(int i, int j) { return flow[static_cast<size_t>(i) * n + j]; }
};

// Northwest-corner initial basic feasible solution. Always yields exactly
// m + n - 1 basis cells (some possibly zero) forming a staircase tree.
Basis northwest_corner(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const int m = static_cast<int>(a.size()), n = static_cast<int>(b.size());
  Basis basis(m, n);
  int i = 0, j = 0;
  double ra = a[0], cb = b[0];
  while (true) {
    double f = std::min(ra, cb);
    basis.insert(i, j);
    basis.f(i, j) = f;
    ra -= f;
    cb -= f;
    if (i == m - 1 && j == n - 1) break;
    if (ra <= cb && i < m - 1) {
      ++i;
      ra = a[i];
    } else if (j < n - 1) {
      ++j;
      cb = b[j];
    } else {
      ++i;
      ra = a[i];
    }
  }
  return basis;
}

// Dual potentials u, v with u[0] = 0, solved over the basis tree.
void solve_duals(const Basis& basis, const Eigen::MatrixXd& C, std::vector<double>& u,
                 std::vector<double>& v) {
  const int m = basis.m, n = basis.n;
  // adjacency: node ids rows [0,m), cols [m, m+n)
  std::vector<std::vector<int>> adj(static_cast<size_t>(m + n));
  for (int i = 0; i < m; ++i)
    for (int j : basis.cells[static_cast<size_t>(i)]) {
      adj[static_cast<size_t>(i)].push_back(m + j);
      adj[static_cast<size_t>(m + j)].push_back(i);
    }
  u.assign(static_cast<size_t>(m), 0.0);
  v.assign(static_cast<size_t>(n), 0.0);
  std::vector<char> seen(static_cast<size_t>(m + n), 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  while (!stack.empty()) {
    int node = stack.back();
    stack.pop_back();
    for (int nb : adj[static_cast<size_t>(node)]) {
      if (seen[static_cast<size_t>(nb)]) continue;
      seen[static_cast<size_t>(nb)] = 1;
      if (node < m) {
        v[static_cast<size_t>(nb - m)] = C(node, nb - m) - u[static_cast<size_t>(node)];
      } else {
        u[static_cast<size_t>(nb)] = C(nb, node - m) - v[static_cast<size_t>(node - m)];
      }
      stack.push_back(nb);
    }
  }
}

// Path between row-node ei and col-node ej in the basis tree, returned as the
// sequence of basis cells along the path.
std::vector<std::pair<int, int>> tree_path(const Basis& basis, int ei, int ej) {
  const int m = basis.m, n = basis.n;
  std::vector<std::vector<int>> adj(static_cast<size_t>(m + n));
  for (int i = 0; i < m; ++i)
    for (int j : basis.cells[static_cast<size_t>(i)]) {
      adj[static_cast<size_t>(i)].push_back(m + j);
      adj[static_cast<size_t>(m + j)].push_back(i);
    }
  std::vector<int> parent(static_cast<size_t>(m + n), -2);
  std::vector<int> stack{ei};
  parent[static_cast<size_t>(ei)] = -1;
  while (!stack.empty()) {
    int node = stack.back();
    stack.pop_back();
    if (node == m + ej) break;
    for (int nb : adj[static_cast<size_t>(node)]) {
      if (parent[static_cast<size_t>(nb)] != -2) continue;
      parent[static_cast<size_t>(nb)] = node;
      stack.push_back(nb);
    }
  }
  std::vector<std::pair<int, int>> path;
  int node = m + ej;
  while (parent[static_cast<size_t>(node)] != -1) {
    int prev = parent[static_cast<size_t>(node)];
    if (prev < m) {
      path.emplace_back(prev, node - m);
    } else {
      path.emplace_back(node, prev - m);
    }
    node = prev;
  }
  std::reverse(path.begin(), path.end());  // now runs ei -> ej
  return path;
}

}  // namespace

Coupling emd_exact(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& C) {
  const int m = static_cast<int>(a.size()), n = static_cast<int>(b.size());
  if (m == 0 || n == 0) throw std::invalid_argument("emd_exact: empty marginal");
  if (C.rows() != m || C.cols() != n) throw std::invalid_argument("emd_exact: cost shape");
  for (int i = 0; i < m; ++i)
    if (a[i] < 0) throw std::invalid_argument("emd_exact: negative mass in a");
  for (int j = 0; j < n; ++j)
    if (b[j] < 0) throw std::invalid_argument("emd_exact: negative mass in b");
  if (std::abs(a.sum() - b.sum()) > kFeasTol)
    throw std::invalid_argument("emd_exact: marginal totals differ");

  Basis basis = northwest_corner(a, b);
  std::vector<double> u, v;
  int pivots = 0;
  const int bland_after = 50 * (m + n);
  const int hard_cap = 1000 * (m + n) + 100000;

  while (true) {
    solve_duals(basis, C, u, v);
    int ei = -1, ej = -1;
    double best = -kReducedTol;
    if (pivots < bland_after) {
      // Most negative reduced cost; first hit wins on ties (lexicographic).
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          if (basis.contains(i, j)) continue;
          double red = C(i, j) - u[static_cast<size_t>(i)] - v[static_cast<size_t>(j)];
          if (red < best) {
            best = red;
            ei = i;
            ej = j;
          }
        }
    } else {
      // Bland-style: first eligible cell in row-major order.
      for (int i = 0; i < m && ei < 0; ++i)
        for (int j = 0; j < n; ++j) {
          if (basis.contains(i, j)) continue;
          double red = C(i, j) - u[static_cast<size_t>(i)] - v[static_cast<size_t>(j)];
          if (red < -kReducedTol) {
            ei = i;
            ej = j;
            break;
          }
        }
    }
    if (ei < 0) break;  // optimal

    auto path = tree_path(basis, ei, ej);
    // Cells along the path alternate -, +, -, ... relative to the entering
    // cell. Theta is the minimum flow over '-' cells; leaving cell breaks
    // ties lexicographically.
    double theta = -1.0;
    int li = -1, lj = -1;
    for (size_t k = 0; k < path.size(); k += 2) {
      auto [i, j] = path[k];
      double f = basis.f(i, j);
      if (theta < 0 || f < theta ||
          (f == theta && (i < li || (i == li && j < lj)))) {
        theta = f;
        li = i;
        lj = j;
      }
    }
    basis.insert(ei, ej);
    basis.f(ei, ej) = theta;
    for (size_t k = 0; k < path.size(); ++k) {
      auto [i, j] = path[k];
      if (k % 2 == 0) {
        basis.f(i, j) -= theta;
      } else {
        basis.f(i, j) += theta;
      }
    }
    basis.f(li, lj) = 0.0;
    basis.erase(li, lj);
    ++pivots;
    if (pivots > hard_cap) throw std::runtime_error("emd_exact: pivot cap exceeded");
  }

  Coupling out;
  out.plan = Eigen::MatrixXd::Zero(m, n);
  for (int i = 0; i < m; ++i)
    for (int j : basis.cells[static_cast<size_t>(i)]) out.plan(i, j) = basis.f(i, j);
  out.cost = (out.plan.array() * C.array()).sum();
  out.pivots = pivots;
  return out;
}

}  // namespace adimp::ot
