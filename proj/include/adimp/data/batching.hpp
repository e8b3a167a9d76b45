// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace adimp::data {

// Class-balanced batches for one source epoch: every batch holds
// floor(k / K) or ceil(k / K) samples of each class, the +1 quota rotating
// across classes. Per-class pools are sampled without replacement and
// reshuffled when exhausted, so class imbalance in the data does not skew
// batch composition.
class BalancedBatcher {
 public:
  BalancedBatcher(const std::vector<int>& labels, int num_classes, int64_t batch_size,
                  uint64_t seed)
      : labels_(labels), k_(num_classes), batch_(batch_size), rng_(seed) {
    if (num_classes < 1) throw std::invalid_argument("BalancedBatcher: num_classes");
    if (batch_size < num_classes)
      throw std::invalid_argument("BalancedBatcher: batch smaller than class count");
    pools_.resize(static_cast<size_t>(k_));
    cursor_.resize(static_cast<size_t>(k_), 0);
    for (size_t i = 0; i < labels.size(); ++i) {
      int y = labels[i];
      if (y < 0 || y >= k_) throw std::invalid_argument("BalancedBatcher: label out of range");
      pools_[static_cast<size_t>(y)].push_back(static_cast<int64_t>(i));
    }
    for (auto& p : pools_) {
      if (p.empty()) throw std::invalid_argument("BalancedBatcher: empty class");
      std::shuffle(p.begin(), p.end(), rng_);
    }
  }

  int64_t batches_per_epoch() const {
    return std::max<int64_t>(1, static_cast<int64_t>(labels_.size()) / batch_);
  }

  std::vector<int64_t> next_batch() {
    std::vector<int64_t> out;
    out.reserve(static_cast<size_t>(batch_));
    int64_t base = batch_ / k_;
    int64_t rem = batch_ % k_;
    for (int c = 0; c < k_; ++c) {
      // Rotate which classes receive the remainder slot.
      int64_t quota = base + (((c - rotation_) % k_ + k_) % k_ < rem ? 1 : 0);
      for (int64_t t = 0; t < quota; ++t) out.push_back(draw(c));
    }
    rotation_ = (rotation_ + static_cast<int>(rem)) % k_;
    return out;
  }

 private:
  int64_t draw(int c) {
    auto& pool = pools_[static_cast<size_t>(c)];
    auto& cur = cursor_[static_cast<size_t>(c)];
    if (cur >= static_cast<int64_t>(pool.size())) {
      std::shuffle(pool.begin(), pool.end(), rng_);
      cur = 0;
    }
    return pool[static_cast<size_t>(cur++)];
  }

  std::vector<int> labels_;
  int k_;
  int64_t batch_;
  std::mt19937_64 rng_;
  std::vector<std::vector<int64_t>> pools_;
  std::vector<int64_t> cursor_;
  int rotation_ = 0;
};

// Plain shuffled epoch batches, cycling indefinitely.
class ShuffledBatcher {
 public:
  ShuffledBatcher(int64_t n, int64_t batch_size, uint64_t seed)
      : n_(n), batch_(batch_size), rng_(seed) {
    if (n < 1) throw std::invalid_argument("ShuffledBatcher: empty dataset");
    order_.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order_[static_cast<size_t>(i)] = i;
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<int64_t> next_batch() {
    std::vector<int64_t> out;
    out.reserve(static_cast<size_t>(batch_));
    for (int64_t t = 0; t < batch_; ++t) {
      if (cursor_ >= n_) reshuffle();
      out.push_back(order_[static_cast<size_t>(cursor_++)]);
    }
    return out;
  }

  // Start a fresh pass; used to re-draw the pool at epoch boundaries.
  void reshuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }

 private:
  int64_t n_, batch_;
  std::mt19937_64 rng_;
  std::vector<int64_t> order_;
  int64_t cursor_ = 0;
};

}  // namespace adimp::data
