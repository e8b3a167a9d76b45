// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "adimp/nn/tape.hpp"

namespace adimp::losses {

inline constexpr double kLogEps = 1e-7;

// -(mean log d_pos + mean log(1 - d_neg)): the binary cross entropy a
// discriminator descends when d_pos is its positive class. The negated value
// is the adversarial log-likelihood the extractors push against through the
// gradient reversal layer.
template <typename T>
int disc_bce(nn::Tape<T>& t, int d_pos, int d_neg, double eps = kLogEps) {
  int lp = t.mean_all(t.log_clamped(d_pos, eps));
  int ln = t.mean_all(t.log_clamped(t.rsub_const(d_neg, 1.0), eps));
  return t.scale(t.add(lp, ln), -1.0);
}

// mean_i || a_i - b_i ||^2 over rows.
template <typename T>
int mse_rows(nn::Tape<T>& t, int a, int b) {
  int d = t.sub(a, b);
  int64_t n = t.value(a).rows();
  return t.scale(t.sum_all(t.mul(d, d)), 1.0 / static_cast<double>(n > 0 ? n : 1));
}

// mean_i -log p_i[y_i] on already-normalized class probabilities.
template <typename T>
int cross_entropy(nn::Tape<T>& t, int probs, const std::vector<int>& labels,
                  double eps = kLogEps) {
  return t.nll_probs(probs, labels, eps);
}

// mean_i of the Shannon entropy -sum_k p log p per row (>= 0).
template <typename T>
int entropy_mean(nn::Tape<T>& t, int probs, double eps = kLogEps) {
  int64_t n = t.value(probs).rows();
  int plogp = t.mul(probs, t.log_clamped(probs, eps));
  return t.scale(t.sum_all(plogp), -1.0 / static_cast<double>(n > 0 ? n : 1));
}

// Per-step loss breakdown. Everything is accumulated in double and the
// composite terms are recomputed from the parts, so the arithmetic
// identities (l2 = l_align + lambda_mse * l_mse when adversarial,
// l2 = lambda_align * l_align + lambda_mse * l_mse for transport,
// l_total = lambda1 * l1 + lambda2 * l2 + lambda3 * l3) hold exactly in
// double precision.
struct LossReport {
  double l1 = 0;       // domain alignment log-likelihood term
  double l_align = 0;  // generated-vs-real alignment (adversarial or transport)
  double l_mse = 0;    // latent reconstruction error on the source
  double l2 = 0;
  double l3 = 0;  // classification cross entropy
  double l_total = 0;

  double lambda1 = 0, lambda2 = 0, lambda3 = 1;
  double lambda_mse = 0;
  double lambda_align = 1;  // 1 for adversarial; the transport weight otherwise

  double d1_acc = 0;  // domain discriminator accuracy at threshold 0.5
  double d2_acc = 0;  // generated-vs-real discriminator accuracy

  double grad_scale1 = 0;  // reversal ramp applied to l1 this step
  double grad_scale2 = 0;

  static LossReport make(double l1, double l_align, double l_mse, double l3, double lambda1,
                         double lambda2, double lambda3, double lambda_mse,
                         double lambda_align = 1.0) {
    LossReport r;
    r.l1 = l1;
    r.l_align = l_align;
    r.l_mse = l_mse;
    r.l3 = l3;
    r.lambda1 = lambda1;
    r.lambda2 = lambda2;
    r.lambda3 = lambda3;
    r.lambda_mse = lambda_mse;
    r.lambda_align = lambda_align;
    r.l2 = lambda_align * l_align + lambda_mse * l_mse;
    r.l_total = lambda1 * r.l1 + lambda2 * r.l2 + lambda3 * r.l3;
    return r;
  }
};

// Mean of per-step reports (for epoch summaries). Composite fields are
// re-derived from the averaged parts with the last report's weights.
inline LossReport average(const std::vector<LossReport>& reports) {
  LossReport m;
  if (reports.empty()) return m;
  for (const auto& r : reports) {
    m.l1 += r.l1;
    m.l_align += r.l_align;
    m.l_mse += r.l_mse;
    m.l3 += r.l3;
    m.d1_acc += r.d1_acc;
    m.d2_acc += r.d2_acc;
  }
  const double n = static_cast<double>(reports.size());
  m.l1 /= n;
  m.l_align /= n;
  m.l_mse /= n;
  m.l3 /= n;
  m.d1_acc /= n;
  m.d2_acc /= n;
  const LossReport& last = reports.back();
  return [&] {
    LossReport out = LossReport::make(m.l1, m.l_align, m.l_mse, m.l3, last.lambda1, last.lambda2,
                                      last.lambda3, last.lambda_mse, last.lambda_align);
    out.d1_acc = m.d1_acc;
    out.d2_acc = m.d2_acc;
    out.grad_scale1 = last.grad_scale1;
    out.grad_scale2 = last.grad_scale2;
    return out;
  }();
}

// Fraction of rows a sigmoid discriminator classifies correctly when `pos`
// should score above 0.5 and `neg` below.
template <typename T>
double disc_accuracy(const nn::Tensor<T>& pos, const nn::Tensor<T>& neg) {
  int64_t correct = 0, total = pos.numel() + neg.numel();
  for (int64_t i = 0; i < pos.numel(); ++i) correct += pos[i] > T(0.5);
  for (int64_t i = 0; i < neg.numel(); ++i) correct += neg[i] <= T(0.5);
  return total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

}  // namespace adimp::losses
