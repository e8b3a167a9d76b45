// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <vector>

#include "adimp/nn/tape.hpp"
#include "adimp/ot/emd.hpp"

namespace adimp::ot {

// Squared euclidean distances between the rows of A (m x d) and B (n x d),
// accumulated in double.
template <typename T>
Eigen::MatrixXd pairwise_sq(const nn::Tensor<T>& A, const nn::Tensor<T>& B) {
  if (A.cols() != B.cols()) throw std::invalid_argument("pairwise_sq: feature width mismatch");
  Eigen::MatrixXd Ad = A.mat().template cast<double>();
  Eigen::MatrixXd Bd = B.mat().template cast<double>();
  Eigen::VectorXd ra = Ad.rowwise().squaredNorm();
  Eigen::VectorXd rb = Bd.rowwise().squaredNorm();
  Eigen::MatrixXd C = (-2.0 * Ad * Bd.transpose());
  C.colwise() += ra;
  C.rowwise() += rb.transpose();
  return C.cwiseMax(0.0);
}

inline Eigen::VectorXd uniform_weights(int64_t n) {
  return Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
}

// Domain alignment transport term. One coupling is solved on the summed
// pairwise cost of both latent blocks (first blocks and generated second
// blocks), then the differentiable loss re-reads that coupling against both
// block pairs. The plan is computed from current values and the gradient
// step runs with it held fixed.
template <typename T>
int transport_alignment(nn::Tape<T>& t, int zs1, int zs2hat, int zt1, int zt2hat,
                        Eigen::MatrixXd* plan_out = nullptr) {
  Eigen::MatrixXd C =
      pairwise_sq(t.value(zs1), t.value(zt1)) + pairwise_sq(t.value(zs2hat), t.value(zt2hat));
  Coupling g = emd_exact(uniform_weights(C.rows()), uniform_weights(C.cols()), C);
  if (plan_out) *plan_out = g.plan;
  return t.add(t.coupling_quadratic(zs1, zt1, g.plan), t.coupling_quadratic(zs2hat, zt2hat, g.plan));
}

// Real-vs-generated second block matching. "dedicated" solves a fresh
// coupling between the two source clouds; the fallback pairs row i with row
// i (an identity plan), which reduces to the mean squared error up to the
// 1/n weighting.
template <typename T>
int transport_match(nn::Tape<T>& t, int z2_real, int z2_gen, bool dedicated,
                    Eigen::MatrixXd* plan_out = nullptr) {
  const int64_t n = t.value(z2_real).rows();
  Eigen::MatrixXd plan;
  if (dedicated) {
    Eigen::MatrixXd C = pairwise_sq(t.value(z2_real), t.value(z2_gen));
    plan = emd_exact(uniform_weights(n), uniform_weights(t.value(z2_gen).rows()), C).plan;
  } else {
    plan = Eigen::MatrixXd::Identity(n, n) / static_cast<double>(n);
  }
  if (plan_out) *plan_out = plan;
  return t.coupling_quadratic(z2_real, z2_gen, plan);
}

}  // namespace adimp::ot
