// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

namespace adimp::ot {

// Optimal coupling between two discrete distributions.
struct Coupling {
  Eigen::MatrixXd plan;  // rows marginal a, cols marginal b
  double cost = 0.0;     // <plan, C>
  int pivots = 0;
};

// Exact earth mover's distance via the transportation simplex.
//
// a and b must be nonnegative with equal totals (checked to 1e-9; throws
// std::invalid_argument otherwise). The result is a vertex of the
// transportation polytope: at most a.size() + b.size() - 1 entries are
// nonzero, marginals are reproduced to 1e-9, and every reduced cost is
// nonnegative to 1e-9 at termination. Pivot selection uses a fixed
// deterministic rule (most negative reduced cost, lexicographic
// tie-breaking), so equal inputs always produce the identical plan.
Coupling emd_exact(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& C);

}  // namespace adimp::ot
