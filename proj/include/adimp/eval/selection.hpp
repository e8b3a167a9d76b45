// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "adimp/data/dataset.hpp"
#include "adimp/eval/metrics.hpp"
#include "adimp/nets/bundle.hpp"
#include "adimp/nn/tape.hpp"

namespace adimp::eval {

struct CandidateScore {
  double risk = 0;         // estimated target risk (cross-entropy link)
  double unweighted = 0;   // plain source-validation cross entropy
  double eta = 0;          // control-variate coefficient
  double mean_raw_weight = 0;
  bool degenerate = false;  // fell back to the unweighted estimate
};

struct SelectionResult {
  size_t best_index = 0;
  std::vector<CandidateScore> scores;
  std::vector<std::string> warnings;
};

// Importance-weighted target-risk estimate for a frozen candidate, a
// simplified deep-embedded-validation scheme. The candidate's domain
// discriminator scores its own deployment-encoding latents; the implied
// target/source density ratio weights the per-sample source-validation cross
// entropy. Weights are normalized to mean one and a control variate on the
// weights removes their leading variance contribution.
inline CandidateScore score_candidate_iw(nets::Bundle<float>& b,
                                         const data::MaskedDataset& source_val) {
  if (source_val.y.empty()) throw std::invalid_argument("score_candidate_iw: unlabeled validation set");
  auto rows = all_rows(source_val.n());
  const int64_t n = source_val.n();

  // Per-sample cross entropy of the deployed classifier.
  auto probs = forward_probs(b, source_val, rows, Encoding::hat);
  std::vector<double> loss(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    int y = source_val.y[static_cast<size_t>(i)];
    double p = std::max(static_cast<double>(probs[i * probs.cols() + y]), 1e-7);
    loss[static_cast<size_t>(i)] = -std::log(p);
  }

  // Domain scores on the same encoding. The discriminator's positive class
  // is the source domain, so the target/source ratio is (1 - d) / d.
  std::vector<double> w(static_cast<size_t>(n));
  {
    nn::Tape<float> t(1, false);
    t.set_grad_enabled(false);
    int x1 = t.input(b.input_block(source_val, rows, 1));
    auto [z1, z2] = b.encode_hat(t, x1);
    int d = b.disc_domain(t, t.concat_cols(z1, z2));
    const auto& dv = t.value(d);
    for (int64_t i = 0; i < n; ++i) {
      double ds = std::clamp(static_cast<double>(dv[i]), 1e-6, 1.0 - 1e-6);
      w[static_cast<size_t>(i)] = (1.0 - ds) / ds;
    }
  }

  CandidateScore out;
  double unweighted = 0;
  for (int64_t i = 0; i < n; ++i) unweighted += loss[static_cast<size_t>(i)];
  out.unweighted = unweighted / static_cast<double>(n);

  double mean_w = 0;
  for (double v : w) mean_w += v;
  mean_w /= static_cast<double>(n);
  out.mean_raw_weight = mean_w;
  if (!(mean_w > 1e-9) || !std::isfinite(mean_w)) {
    out.degenerate = true;
    out.risk = out.unweighted;
    return out;
  }
  for (double& v : w) v /= mean_w;  // mean exactly 1 up to rounding

  double mean_wl = 0, mw = 0;
  for (int64_t i = 0; i < n; ++i) {
    mean_wl += w[static_cast<size_t>(i)] * loss[static_cast<size_t>(i)];
    mw += w[static_cast<size_t>(i)];
  }
  mean_wl /= static_cast<double>(n);
  mw /= static_cast<double>(n);
  double cov = 0, var = 0;
  for (int64_t i = 0; i < n; ++i) {
    double wi = w[static_cast<size_t>(i)];
    cov += (wi * loss[static_cast<size_t>(i)] - mean_wl) * (wi - mw);
    var += (wi - mw) * (wi - mw);
  }
  cov /= static_cast<double>(n);
  var /= static_cast<double>(n);
  out.eta = var > 1e-12 ? -cov / var : 0.0;
  out.risk = mean_wl + out.eta * (mw - 1.0);
  return out;
}

// Ranks candidates by estimated target risk; lowest wins. Degenerate weight
// sets fall back to the unweighted source estimate with a warning.
inline SelectionResult select_model_iw(std::vector<nets::Bundle<float>*> candidates,
                                       const data::MaskedDataset& source_val) {
  if (candidates.empty()) throw std::invalid_argument("select_model_iw: no candidates");
  SelectionResult res;
  for (size_t i = 0; i < candidates.size(); ++i) {
    auto score = score_candidate_iw(*candidates[i], source_val);
    if (score.degenerate)
      res.warnings.push_back("candidate " + std::to_string(i) +
                             ": degenerate importance weights, using unweighted source "
                             "cross entropy");
    res.scores.push_back(score);
  }
  res.best_index = 0;
  for (size_t i = 1; i < res.scores.size(); ++i)
    if (res.scores[i].risk < res.scores[res.best_index].risk) res.best_index = i;
  return res;
}

}  // namespace adimp::eval
