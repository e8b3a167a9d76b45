// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "adimp/data/dataset.hpp"
#include "adimp/data/mask.hpp"

namespace adimp::data {

// Two-domain synthetic benchmark with a deliberately multimodal conditional
// p(x2 | x1).
//
// Generative process (shared across domains except where noted):
//   cluster c ~ U{0..C-1}, mode m ~ U{-1,+1}
//   head   u = mu_c + sigma_head * eps            (source)
//          u = shift_scale * (mu_c + sigma_head * eps) + shift_offset_vec
//                                                  (target: affine map of the
//                                                   source head marginal)
//   tail   t = P u + m * mode_gap * e + sigma_tail * eps'
//   x = concat(u, t)
//
// The tail kernel p(t | u) is the same function in both domains, an equal
// mixture of two Gaussians centered at P u +/- mode_gap * e, so the
// conditional of the missing block given the observed block is identical
// across domains while the observed marginal shifts. e is supported on the
// last half of the tail, so any suffix mask covering at least that support
// hides both modes entirely.
//
// Labels: y = c by default (the hidden mode is a nuisance factor). With
// mode_affects_label = true and even K, y = 2c + [m > 0], making the missing
// block strictly label-informative.
struct SyntheticSpec {
  int64_t n_per_domain = 6000;
  int64_t n_heldout = 2000;
  int K = 4;
  int64_t dim = 16;
  int64_t tail = 8;
  double center_radius = 2.2;
  double sigma_head = 0.85;
  double sigma_tail = 0.25;
  double mode_gap = 1.6;
  double shift_scale = 1.0;
  double shift_offset = 0.7;
  bool mode_affects_label = false;
  uint64_t seed = 0;
};

struct SyntheticOracle {
  SyntheticSpec spec;
  int clusters = 0;
  Eigen::MatrixXd centers;   // clusters x head
  Eigen::MatrixXd P;         // tail x head
  Eigen::VectorXd mode_dir;  // tail, unit norm
  Eigen::VectorXd shift_vec; // head

  int64_t head() const { return spec.dim - spec.tail; }

  // The two exact conditional modes of the tail given an observed head.
  Eigen::VectorXd conditional_mode(const Eigen::VectorXd& u, int sign) const {
    return P * u + (sign >= 0 ? 1.0 : -1.0) * spec.mode_gap * mode_dir;
  }
  int conditional_mode_count() const { return 2; }

  Eigen::VectorXd target_center(int c) const {
    return spec.shift_scale * centers.row(c).transpose() + shift_vec;
  }

  // Log density of one mixture component (c, m) at x, for the given domain.
  double component_logpdf(const Eigen::VectorXd& x, int c, int m, bool target_domain) const {
    int64_t dh = head(), dt = spec.tail;
    Eigen::VectorXd u = x.head(dh), t = x.tail(dt);
    double sh = spec.sigma_head * (target_domain ? spec.shift_scale : 1.0);
    Eigen::VectorXd mu = target_domain ? target_center(c) : Eigen::VectorXd(centers.row(c).transpose());
    double lp = -0.5 * ((u - mu) / sh).squaredNorm() - static_cast<double>(dh) * std::log(sh);
    Eigen::VectorXd tm = P * u + (m >= 0 ? 1.0 : -1.0) * spec.mode_gap * mode_dir;
    lp += -0.5 * ((t - tm) / spec.sigma_tail).squaredNorm() -
          static_cast<double>(dt) * std::log(spec.sigma_tail);
    return lp;  // constants independent of (c, m) omitted
  }

  // Posterior p(y | x) by enumeration over the mixture components.
  Eigen::VectorXd posterior_full(const Eigen::VectorXd& x, bool target_domain) const {
    Eigen::VectorXd logp(spec.K);
    logp.setConstant(-std::numeric_limits<double>::infinity());
    for (int c = 0; c < clusters; ++c)
      for (int m : {-1, 1}) {
        int y = label_of(c, m);
        double lp = component_logpdf(x, c, m, target_domain);
        logp[y] = logp[y] == -std::numeric_limits<double>::infinity()
                      ? lp
                      : std::max(logp[y], lp) + std::log1p(std::exp(-std::abs(logp[y] - lp)));
      }
    double mx = logp.maxCoeff();
    Eigen::VectorXd p = (logp.array() - mx).exp();
    return p / p.sum();
  }

  int bayes_label_full(const Eigen::VectorXd& x, bool target_domain) const {
    Eigen::VectorXd p = posterior_full(x, target_domain);
    int best = 0;
    for (int k = 1; k < spec.K; ++k)
      if (p[k] > p[best]) best = k;
    return best;
  }

  // Posterior given only the observed head (tail integrated out).
  int bayes_label_head(const Eigen::VectorXd& u, bool target_domain) const {
    Eigen::VectorXd logp(spec.K);
    logp.setConstant(-std::numeric_limits<double>::infinity());
    double sh = spec.sigma_head * (target_domain ? spec.shift_scale : 1.0);
    for (int c = 0; c < clusters; ++c)
      for (int m : {-1, 1}) {
        int y = label_of(c, m);
        Eigen::VectorXd mu =
            target_domain ? target_center(c) : Eigen::VectorXd(centers.row(c).transpose());
        double lp = -0.5 * ((u - mu) / sh).squaredNorm();
        logp[y] = logp[y] == -std::numeric_limits<double>::infinity()
                      ? lp
                      : std::max(logp[y], lp) + std::log1p(std::exp(-std::abs(logp[y] - lp)));
      }
    int best = 0;
    for (int k = 1; k < spec.K; ++k)
      if (logp[k] > logp[best]) best = k;
    return best;
  }

  double bayes_accuracy(const Dataset& d, bool target_domain, bool use_full) const {
    if (!d.labeled()) throw std::invalid_argument("bayes_accuracy: unlabeled dataset");
    int64_t correct = 0;
    for (int64_t i = 0; i < d.n(); ++i) {
      Eigen::Map<const Eigen::VectorXf> row(d.X.ptr() + i * d.d(), d.d());
      Eigen::VectorXd x = row.cast<double>();
      int pred = use_full ? bayes_label_full(x, target_domain)
                          : bayes_label_head(x.head(head()), target_domain);
      if (pred == d.y[static_cast<size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(d.n());
  }

  int label_of(int c, int m) const {
    if (spec.mode_affects_label && spec.K % 2 == 0) return 2 * c + (m > 0 ? 1 : 0);
    return c;
  }

  // The canonical observed/missing split at the head/tail boundary.
  FixedMask canonical_mask() const {
    return FixedMask::suffix_fraction(spec.dim, static_cast<double>(spec.tail) / spec.dim);
  }
};

struct SyntheticData {
  Dataset source, target;
  Dataset source_heldout, target_heldout;
  SyntheticOracle oracle;
};

inline SyntheticData make_synthetic_multimodal(const SyntheticSpec& spec) {
  if (spec.K < 2) throw std::invalid_argument("synthetic: K must be >= 2");
  if (spec.tail < 2 || spec.tail >= spec.dim)
    throw std::invalid_argument("synthetic: tail must be in [2, dim)");
  if (spec.mode_affects_label && spec.K % 2 != 0)
    throw std::invalid_argument("synthetic: mode_affects_label requires even K");

  SyntheticOracle o;
  o.spec = spec;
  o.clusters = (spec.mode_affects_label && spec.K % 2 == 0) ? spec.K / 2 : spec.K;
  int64_t dh = spec.dim - spec.tail, dt = spec.tail;

  o.centers.resize(o.clusters, dh);
  for (int c = 0; c < o.clusters; ++c)
    for (int64_t j = 0; j < dh; ++j)
      o.centers(c, j) = spec.center_radius *
                        std::cos(2.0 * M_PI * c / o.clusters + 2.0 * M_PI * j / static_cast<double>(dh));

  o.P.resize(dt, dh);
  for (int64_t i = 0; i < dt; ++i)
    for (int64_t j = 0; j < dh; ++j)
      o.P(i, j) = 0.5 * std::cos(M_PI * static_cast<double>(i + 2 * j + 1) / static_cast<double>(dt + dh)) /
                  std::sqrt(static_cast<double>(dh));

  // Mode pattern on the last half of the tail.
  int64_t support = (dt + 1) / 2;
  o.mode_dir = Eigen::VectorXd::Zero(dt);
  for (int64_t i = dt - support; i < dt; ++i) o.mode_dir[i] = 1.0 / std::sqrt(static_cast<double>(support));

  o.shift_vec.resize(dh);
  for (int64_t j = 0; j < dh; ++j)
    o.shift_vec[j] = spec.shift_offset * std::cos(2.0 * M_PI * j / static_cast<double>(dh) + 0.9);

  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> cluster_dist(0, o.clusters - 1);
  std::bernoulli_distribution mode_dist(0.5);
  std::normal_distribution<double> gauss(0.0, 1.0);

  auto fill = [&](Dataset& d, int64_t n, bool target_domain, const std::string& name) {
    d.name = name;
    d.num_classes = spec.K;
    d.X = nn::Tensor<float>({n, spec.dim});
    d.y.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      int c = cluster_dist(rng);
      int m = mode_dist(rng) ? 1 : -1;
      Eigen::VectorXd u(dh);
      for (int64_t j = 0; j < dh; ++j) u[j] = o.centers(c, j) + spec.sigma_head * gauss(rng);
      if (target_domain) u = spec.shift_scale * u + o.shift_vec;
      Eigen::VectorXd t = o.P * u + (m > 0 ? 1.0 : -1.0) * spec.mode_gap * o.mode_dir;
      for (int64_t j = 0; j < dt; ++j) t[j] += spec.sigma_tail * gauss(rng);
      float* row = d.X.ptr() + i * spec.dim;
      for (int64_t j = 0; j < dh; ++j) row[j] = static_cast<float>(u[j]);
      for (int64_t j = 0; j < dt; ++j) row[dh + j] = static_cast<float>(t[j]);
      d.y[static_cast<size_t>(i)] = o.label_of(c, m);
    }
  };

  SyntheticData out;
  out.oracle = o;
  fill(out.source, spec.n_per_domain, false, "synthetic-source");
  fill(out.target, spec.n_per_domain, true, "synthetic-target");
  fill(out.source_heldout, spec.n_heldout, false, "synthetic-source-heldout");
  fill(out.target_heldout, spec.n_heldout, true, "synthetic-target-heldout");
  return out;
}

}  // namespace adimp::data
