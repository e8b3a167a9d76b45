// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace adimp::data {

// Deterministic feature mask shared by every sample of a dataset. The split
// is structural: the same observed/missing index sets apply to all rows.
struct FixedMask {
  int64_t n_total = 0;
  std::vector<int64_t> observed;  // sorted
  std::vector<int64_t> missing;   // sorted complement of observed

  // Image geometry when built over flattened (channels, height, width)
  // features; all zero for tabular masks.
  int64_t channels = 0, height = 0, width = 0;
  int64_t first_masked_row = -1;  // for horizontal patch masks

  bool is_image() const { return channels > 0; }
  int64_t d1() const { return static_cast<int64_t>(observed.size()); }
  int64_t d2() const { return static_cast<int64_t>(missing.size()); }

  void check() const {
    if (static_cast<int64_t>(observed.size() + missing.size()) != n_total)
      throw std::logic_error("mask: observed/missing do not partition the features");
  }

  // Mask the bottom `fraction` of image rows (all channels). The number of
  // masked rows is floor(fraction * height), capped at height - 1 so at
  // least one row stays observed; fraction 0 yields the full-data mask.
  static FixedMask horizontal_patch(int64_t channels, int64_t height, int64_t width,
                                    double fraction) {
    if (fraction < 0.0 || fraction > 1.0)
      throw std::invalid_argument("horizontal_patch: fraction must be in [0, 1]");
    int64_t masked_rows =
        static_cast<int64_t>(std::floor(fraction * static_cast<double>(height) + 1e-9));
    masked_rows = std::max<int64_t>(0, std::min<int64_t>(height - 1, masked_rows));
    FixedMask m;
    m.n_total = channels * height * width;
    m.channels = channels;
    m.height = height;
    m.width = width;
    m.first_masked_row = height - masked_rows;
    for (int64_t c = 0; c < channels; ++c)
      for (int64_t r = 0; r < height; ++r)
        for (int64_t q = 0; q < width; ++q) {
          int64_t idx = (c * height + r) * width + q;
          if (r >= m.first_masked_row) {
            m.missing.push_back(idx);
          } else {
            m.observed.push_back(idx);
          }
        }
    m.check();
    return m;
  }

  // Mask the last floor(fraction * n) features of a flat feature vector.
  static FixedMask suffix_fraction(int64_t n_total, double fraction) {
    if (fraction < 0.0 || fraction > 1.0)
      throw std::invalid_argument("suffix_fraction: fraction must be in [0, 1]");
    int64_t masked = static_cast<int64_t>(std::floor(fraction * static_cast<double>(n_total) + 1e-9));
    masked = std::max<int64_t>(0, std::min<int64_t>(n_total - 1, masked));
    FixedMask m;
    m.n_total = n_total;
    for (int64_t i = 0; i < n_total; ++i)
      (i < n_total - masked ? m.observed : m.missing).push_back(i);
    m.check();
    return m;
  }

  static FixedMask from_missing(int64_t n_total, std::vector<int64_t> missing_idx) {
    FixedMask m;
    m.n_total = n_total;
    std::vector<char> is_missing(static_cast<size_t>(n_total), 0);
    for (int64_t i : missing_idx) {
      if (i < 0 || i >= n_total) throw std::invalid_argument("from_missing: index out of range");
      if (is_missing[static_cast<size_t>(i)]) throw std::invalid_argument("from_missing: duplicate index");
      is_missing[static_cast<size_t>(i)] = 1;
    }
    for (int64_t i = 0; i < n_total; ++i)
      (is_missing[static_cast<size_t>(i)] ? m.missing : m.observed).push_back(i);
    m.check();
    return m;
  }
};

}  // namespace adimp::data
