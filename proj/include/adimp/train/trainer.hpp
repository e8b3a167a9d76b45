// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "adimp/data/batching.hpp"
#include "adimp/data/dataset.hpp"
#include "adimp/losses/losses.hpp"
#include "adimp/nets/bundle.hpp"
#include "adimp/nn/modules.hpp"
#include "adimp/train/config.hpp"

namespace adimp::train {

struct MetricRow {
  int epoch = 0;
  std::string split;  // train | source | target
  std::string metric;
  double value = 0;
};

struct RunRecord {
  std::string status = "completed";  // completed | diverged
  std::string note;
  std::vector<MetricRow> rows;
  int best_epoch = -1;
  double best_score = -1;  // target accuracy when a target eval set exists
  double final_source_accuracy = std::nan("");
  double final_target_accuracy = std::nan("");
  std::vector<nn::Tensor<float>> best_snapshot;  // aligned with Bundle::named_tensors
};

struct TrainSets {
  const data::MaskedDataset* train_source = nullptr;
  const data::MaskedDataset* train_target = nullptr;  // required for adapt_* variants
  const data::MaskedDataset* eval_source = nullptr;
  const data::MaskedDataset* eval_target = nullptr;
};

// Two-phase trainer for a component bundle: a classification-only warmup
// (init_epochs, flat learning rate, real second block where the variant has
// one) followed by the joint phase for the configured variant and backend.
// Everything is driven by cfg.seed; runs are bit-reproducible.
class Trainer {
 public:
  Trainer(nets::Bundle<float>& bundle, const TrainSets& sets, const TrainConfig& cfg);

  // The bundle is left at its final state; the best checkpoint by eval score
  // lives in the returned record.
  RunRecord run();

  static std::vector<nn::Tensor<float>> snapshot(nets::Bundle<float>& bundle);
  static void restore(nets::Bundle<float>& bundle, const std::vector<nn::Tensor<float>>& snap);

 private:
  using Params = std::vector<nn::Parameter<float>*>;

  void validate() const;
  std::vector<int> batch_labels(const data::MaskedDataset& ds,
                                const std::vector<int64_t>& rows) const;
  // Classifier pass on a training tape; returns {cross entropy node, probs node}.
  std::pair<int, int> classifier_loss(nn::Tape<float>& t, const data::MaskedDataset& ds,
                                      const std::vector<int64_t>& rows, eval::Encoding enc);
  losses::LossReport step_adversarial(nn::Tape<float>& t, const std::vector<int64_t>& rows_s,
                                      const std::vector<int64_t>& rows_t, double progress);
  losses::LossReport step_transport(nn::Tape<float>& t, const std::vector<int64_t>& rows_s,
                                    const std::vector<int64_t>& rows_t, double progress);
  void eval_epoch(int epoch, RunRecord& rec);

  // Joint-phase parameter groups. `fast` holds the heads on the faster decay
  // schedule when fast_decay_heads is set, otherwise it is empty.
  void main_groups(Params& main, Params& fast) const;
  Params init_group() const;

  nets::Bundle<float>& b_;
  TrainSets sets_;
  TrainConfig cfg_;
  nn::Adam<float> adam_;
};

}  // namespace adimp::train
