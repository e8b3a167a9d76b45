// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "adimp/data/mask.hpp"
#include "adimp/nn/tensor.hpp"

namespace adimp::data {

// Unmasked dataset: one flat feature row per sample. Images are flattened
// (channels, height, width), already normalized to [-1, 1].
struct Dataset {
  std::string name;
  nn::Tensor<float> X;  // n x d
  std::vector<int> y;   // empty when unlabeled
  int num_classes = 0;
  int64_t channels = 0, height = 0, width = 0;  // zero for tabular data

  int64_t n() const { return X.rows(); }
  int64_t d() const { return X.cols(); }
  bool labeled() const { return !y.empty(); }
};

// Dataset split into the observed block x1 and the missing block x2 under a
// FixedMask. For a structurally masked domain, x2 is an all-zero placeholder
// and x2_present is false.
struct MaskedDataset {
  std::string name;
  nn::Tensor<float> X1;  // n x d1 (feature order = mask.observed)
  nn::Tensor<float> X2;  // n x d2 (feature order = mask.missing)
  std::vector<int> y;
  FixedMask mask;
  bool x2_present = true;
  int num_classes = 0;

  int64_t n() const { return X1.rows(); }
};

// Split a dataset along the mask. keep_missing_block = false zero-fills x2
// and marks it structurally missing (the target-domain situation).
inline MaskedDataset apply_mask(const Dataset& d, const FixedMask& m, bool keep_missing_block) {
  m.check();
  if (m.n_total != d.d())
    throw std::invalid_argument("apply_mask: mask covers " + std::to_string(m.n_total) +
                                " features, dataset has " + std::to_string(d.d()));
  MaskedDataset out;
  out.name = d.name;
  out.y = d.y;
  out.mask = m;
  out.num_classes = d.num_classes;
  out.x2_present = keep_missing_block;
  int64_t n = d.n(), d1 = m.d1(), d2 = m.d2();
  out.X1 = nn::Tensor<float>({n, d1});
  out.X2 = nn::Tensor<float>({n, d2}, 0.0f);
  for (int64_t i = 0; i < n; ++i) {
    const float* src = d.X.ptr() + i * d.d();
    float* x1 = out.X1.ptr() + i * d1;
    for (int64_t k = 0; k < d1; ++k) x1[k] = src[m.observed[static_cast<size_t>(k)]];
    if (keep_missing_block) {
      float* x2 = out.X2.ptr() + i * d2;
      for (int64_t k = 0; k < d2; ++k) x2[k] = src[m.missing[static_cast<size_t>(k)]];
    }
  }
  return out;
}

// Row subset (used for subsampling and train/validation splits).
inline MaskedDataset take_rows(const MaskedDataset& d, const std::vector<int64_t>& rows) {
  MaskedDataset out;
  out.name = d.name;
  out.mask = d.mask;
  out.x2_present = d.x2_present;
  out.num_classes = d.num_classes;
  int64_t d1 = d.X1.cols(), d2 = d.X2.cols();
  out.X1 = nn::Tensor<float>({static_cast<int64_t>(rows.size()), d1});
  out.X2 = nn::Tensor<float>({static_cast<int64_t>(rows.size()), d2}, 0.0f);
  if (!d.y.empty()) out.y.resize(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    out.X1.mat().row(static_cast<int64_t>(i)) = d.X1.mat().row(rows[i]);
    out.X2.mat().row(static_cast<int64_t>(i)) = d.X2.mat().row(rows[i]);
    if (!d.y.empty()) out.y[i] = d.y[static_cast<size_t>(rows[i])];
  }
  return out;
}

// Put the two blocks back into original feature order. Structurally missing
// entries come back as zeros, so apply_mask(reassemble(m), m.mask, ...) is
// idempotent.
inline Dataset reassemble(const MaskedDataset& d) {
  Dataset out;
  out.name = d.name;
  out.y = d.y;
  out.num_classes = d.num_classes;
  out.channels = d.mask.channels;
  out.height = d.mask.height;
  out.width = d.mask.width;
  out.X = nn::Tensor<float>({d.n(), d.mask.n_total}, 0.0f);
  for (int64_t i = 0; i < d.n(); ++i) {
    float* dst = out.X.ptr() + i * d.mask.n_total;
    const float* x1 = d.X1.ptr() + i * d.X1.cols();
    for (size_t k = 0; k < d.mask.observed.size(); ++k) dst[d.mask.observed[k]] = x1[k];
    if (d.x2_present) {
      const float* x2 = d.X2.ptr() + i * d.X2.cols();
      for (size_t k = 0; k < d.mask.missing.size(); ++k) dst[d.mask.missing[k]] = x2[k];
    }
  }
  return out;
}

inline Dataset take_rows(const Dataset& d, const std::vector<int64_t>& rows) {
  Dataset out;
  out.name = d.name;
  out.num_classes = d.num_classes;
  out.channels = d.channels;
  out.height = d.height;
  out.width = d.width;
  out.X = nn::Tensor<float>({static_cast<int64_t>(rows.size()), d.d()});
  if (!d.y.empty()) out.y.resize(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    out.X.mat().row(static_cast<int64_t>(i)) = d.X.mat().row(rows[i]);
    if (!d.y.empty()) out.y[i] = d.y[static_cast<size_t>(rows[i])];
  }
  return out;
}

// Deterministic subsample of `count` rows. Labeled datasets are subsampled
// per class proportionally (largest remainder), which keeps the label
// distribution of the full split; unlabeled datasets use a seeded shuffle.
inline Dataset subsample(const Dataset& d, int64_t count, uint64_t seed) {
  if (count <= 0 || count > d.n())
    throw std::invalid_argument("subsample: count must be in [1, n]");
  if (count == d.n()) return d;
  std::mt19937_64 rng(seed);
  std::vector<int64_t> pick;
  if (d.labeled() && d.num_classes > 1) {
    std::vector<std::vector<int64_t>> pools(static_cast<size_t>(d.num_classes));
    for (int64_t i = 0; i < d.n(); ++i) pools[static_cast<size_t>(d.y[static_cast<size_t>(i)])].push_back(i);
    // largest-remainder apportionment of `count` across classes
    std::vector<int64_t> quota(pools.size(), 0);
    std::vector<std::pair<double, size_t>> rem;
    int64_t assigned = 0;
    for (size_t c = 0; c < pools.size(); ++c) {
      double exact = static_cast<double>(count) * static_cast<double>(pools[c].size()) /
                     static_cast<double>(d.n());
      quota[c] = static_cast<int64_t>(exact);
      assigned += quota[c];
      rem.push_back({exact - static_cast<double>(quota[c]), c});
    }
    std::stable_sort(rem.begin(), rem.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (size_t i = 0; assigned < count && i < rem.size(); ++i, ++assigned) ++quota[rem[i].second];
    for (size_t c = 0; c < pools.size(); ++c) {
      std::shuffle(pools[c].begin(), pools[c].end(), rng);
      quota[c] = std::min<int64_t>(quota[c], static_cast<int64_t>(pools[c].size()));
      pick.insert(pick.end(), pools[c].begin(), pools[c].begin() + quota[c]);
    }
  } else {
    pick.resize(static_cast<size_t>(d.n()));
    for (int64_t i = 0; i < d.n(); ++i) pick[static_cast<size_t>(i)] = i;
    std::shuffle(pick.begin(), pick.end(), rng);
    pick.resize(static_cast<size_t>(count));
  }
  std::sort(pick.begin(), pick.end());
  return take_rows(d, pick);
}

}  // namespace adimp::data
