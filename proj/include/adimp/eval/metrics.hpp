// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "adimp/data/dataset.hpp"
#include "adimp/nets/bundle.hpp"
#include "adimp/nn/tape.hpp"

namespace adimp::eval {

// How a component bundle turns a masked sample into classifier input.
//   full:   (g1(x1), g2(x2))        needs the second block present
//   hat:    (g1(x1), r(g1(x1)))     the deployment encoding
//   zero:   (g1(x1), g2(0))         zero-imputation baseline
//   ignore: g1(x1) only             half-width classifier
enum class Encoding { full, hat, zero, ignore };

inline const char* encoding_name(Encoding e) {
  switch (e) {
    case Encoding::full:
      return "full";
    case Encoding::hat:
      return "hat";
    case Encoding::zero:
      return "zero";
    case Encoding::ignore:
      return "ignore";
  }
  return "?";
}

// Eval-mode class probabilities for the given rows (batch-norm frozen,
// dropout off). Deterministic for a frozen bundle.
inline nn::Tensor<float> forward_probs(nets::Bundle<float>& b, const data::MaskedDataset& ds,
                                       const std::vector<int64_t>& rows, Encoding enc,
                                       int64_t batch = 256) {
  if (enc == Encoding::full && !ds.x2_present)
    throw std::logic_error("forward_probs: full encoding on a structurally masked dataset");
  nn::Tensor<float> out({static_cast<int64_t>(rows.size()), b.arch.num_classes});
  for (size_t begin = 0; begin < rows.size(); begin += static_cast<size_t>(batch)) {
    size_t end = std::min(rows.size(), begin + static_cast<size_t>(batch));
    std::vector<int64_t> chunk(rows.begin() + static_cast<int64_t>(begin),
                               rows.begin() + static_cast<int64_t>(end));
    nn::Tape<float> t(1, /*training=*/false);
    t.set_grad_enabled(false);
    int x1 = t.input(b.input_block(ds, chunk, 1));
    int p;
    switch (enc) {
      case Encoding::full: {
        int x2 = t.input(b.input_block(ds, chunk, 2));
        auto [z1, z2] = b.encode_full(t, x1, x2);
        p = b.classify_pair(t, z1, z2);
        break;
      }
      case Encoding::hat: {
        auto [z1, z2] = b.encode_hat(t, x1);
        p = b.classify_pair(t, z1, z2);
        break;
      }
      case Encoding::zero: {
        int z1 = b.encode1(t, x1);
        int z2 = b.encode2(t, t.input(b.zero_block2(ds, static_cast<int64_t>(chunk.size()))));
        p = b.classify_pair(t, z1, z2);
        break;
      }
      case Encoding::ignore: {
        p = b.classify_single(t, b.encode1(t, x1));
        break;
      }
      default:
        throw std::logic_error("forward_probs: bad encoding");
    }
    const auto& P = t.value(p);
    for (size_t i = begin; i < end; ++i)
      for (int64_t k = 0; k < out.cols(); ++k)
        out[static_cast<int64_t>(i) * out.cols() + k] =
            P[static_cast<int64_t>(i - begin) * out.cols() + k];
  }
  return out;
}

inline std::vector<int64_t> all_rows(int64_t n, int64_t cap = 0) {
  if (cap > 0 && cap < n) n = cap;
  std::vector<int64_t> rows(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) rows[static_cast<size_t>(i)] = i;
  return rows;
}

inline std::vector<int> argmax_rows(const nn::Tensor<float>& probs) {
  std::vector<int> out(static_cast<size_t>(probs.rows()));
  for (int64_t i = 0; i < probs.rows(); ++i) {
    int best = 0;
    for (int64_t k = 1; k < probs.cols(); ++k)
      if (probs[i * probs.cols() + k] > probs[i * probs.cols() + best]) best = static_cast<int>(k);
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

inline double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("accuracy: length mismatch");
  if (predictions.empty()) return 0.0;
  int64_t hit = 0;
  for (size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

// Mean negative log-probability of the true class, natural log, clamped.
inline double mean_cross_entropy(const nn::Tensor<float>& probs, const std::vector<int>& labels,
                                 double eps = 1e-7) {
  if (static_cast<size_t>(probs.rows()) != labels.size())
    throw std::invalid_argument("mean_cross_entropy: length mismatch");
  double acc = 0;
  for (int64_t i = 0; i < probs.rows(); ++i) {
    int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= probs.cols()) throw std::invalid_argument("mean_cross_entropy: label out of range");
    double p = std::max(static_cast<double>(probs[i * probs.cols() + y]), eps);
    acc -= std::log(p);
  }
  return probs.rows() > 0 ? acc / static_cast<double>(probs.rows()) : 0.0;
}

}  // namespace adimp::eval
