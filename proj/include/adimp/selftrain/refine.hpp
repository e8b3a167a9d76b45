// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "adimp/data/batching.hpp"
#include "adimp/data/dataset.hpp"
#include "adimp/eval/metrics.hpp"
#include "adimp/losses/losses.hpp"
#include "adimp/nets/bundle.hpp"
#include "adimp/nn/modules.hpp"
#include "adimp/train/config.hpp"
#include "adimp/train/trainer.hpp"
#include "adimp/util/seeding.hpp"

namespace adimp::selftrain {

// Target samples the frozen classifier is confident about.
struct PseudoLabelSet {
  std::vector<int64_t> indices;
  std::vector<int> labels;          // argmax at selection time
  std::vector<double> confidences;  // max class probability, each >= tau
  double tau = 0.95;

  size_t size() const { return indices.size(); }
};

// Deterministic confidence-threshold selection on a frozen bundle.
inline PseudoLabelSet select_pseudo_labels(nets::Bundle<float>& b,
                                           const data::MaskedDataset& target,
                                           eval::Encoding enc, double tau) {
  PseudoLabelSet out;
  out.tau = tau;
  auto rows = eval::all_rows(target.n());
  auto probs = eval::forward_probs(b, target, rows, enc);
  for (int64_t i = 0; i < probs.rows(); ++i) {
    int best = 0;
    for (int64_t k = 1; k < probs.cols(); ++k)
      if (probs[i * probs.cols() + k] > probs[i * probs.cols() + best]) best = static_cast<int>(k);
    double conf = static_cast<double>(probs[i * probs.cols() + best]);
    if (conf >= tau) {
      out.indices.push_back(i);
      out.labels.push_back(best);
      out.confidences.push_back(conf);
    }
  }
  return out;
}

struct RefineConfig {
  int epochs = 10;
  double tau = 0.95;
  double lambda = 0.1;  // entropy weight: 0.1 for digits, 1 for tabular ads
  double lr = 1e-3;     // base-method learning rate divided by 10
  int64_t batch = 128;
  // The printed refinement objective adds +lambda * sum h log h, i.e. minus
  // the entropy, so minimizing it literally spreads the predictions. The
  // default resolves the sign toward entropy minimization; literal mode keeps
  // the printed form.
  bool literal_entropy_sign = false;
  uint64_t seed = 0;
  int64_t eval_cap = 0;
};

// One minimization step's index sets. `pseudo`/`rest` index the target set.
struct RefineBatch {
  std::vector<int64_t> source;
  std::vector<int64_t> pseudo;
  std::vector<int> pseudo_labels;
  std::vector<int64_t> rest;
};

namespace detail {

inline int encode_probs(nn::Tape<float>& t, nets::Bundle<float>& b,
                        const data::MaskedDataset& ds, const std::vector<int64_t>& rows,
                        eval::Encoding enc) {
  int x1 = t.input(b.input_block(ds, rows, 1));
  switch (enc) {
    case eval::Encoding::full: {
      int x2 = t.input(b.input_block(ds, rows, 2));
      auto [z1, z2] = b.encode_full(t, x1, x2);
      return b.classify_pair(t, z1, z2);
    }
    case eval::Encoding::hat: {
      auto [z1, z2] = b.encode_hat(t, x1);
      return b.classify_pair(t, z1, z2);
    }
    case eval::Encoding::zero: {
      int z1 = b.encode1(t, x1);
      int z2 = b.encode2(t, t.input(b.zero_block2(ds, static_cast<int64_t>(rows.size()))));
      return b.classify_pair(t, z1, z2);
    }
    case eval::Encoding::ignore:
      return b.classify_single(t, b.encode1(t, x1));
  }
  return -1;
}

}  // namespace detail

// Cross entropy over the union of the labelled source batch and the
// pseudo-labelled target batch (every sample weighted equally), plus the
// entropy term over the undecided remainder. Returns the tape node of the
// scalar objective.
inline int refinement_loss(nn::Tape<float>& t, nets::Bundle<float>& b,
                           const data::MaskedDataset& S, const data::MaskedDataset& T,
                           const RefineBatch& batch, eval::Encoding enc_s, eval::Encoding enc_t,
                           double lambda, bool literal_entropy_sign,
                           double* cem_out = nullptr, double* entropy_out = nullptr) {
  const double ns = static_cast<double>(batch.source.size());
  const double npl = static_cast<double>(batch.pseudo.size());
  int total = -1;
  double cem_val = 0;
  if (!batch.source.empty()) {
    int probs = detail::encode_probs(t, b, S, batch.source, enc_s);
    std::vector<int> y(batch.source.size());
    for (size_t i = 0; i < batch.source.size(); ++i)
      y[i] = S.y[static_cast<size_t>(batch.source[i])];
    int ce = losses::cross_entropy(t, probs, y);
    total = t.scale(ce, ns / (ns + npl > 0 ? ns + npl : 1));
    cem_val += static_cast<double>(t.value(ce)[0]) * ns / (ns + npl);
  }
  if (!batch.pseudo.empty()) {
    int probs = detail::encode_probs(t, b, T, batch.pseudo, enc_t);
    int ce = losses::cross_entropy(t, probs, batch.pseudo_labels);
    int term = t.scale(ce, npl / (ns + npl));
    total = total < 0 ? term : t.add(total, term);
    cem_val += static_cast<double>(t.value(ce)[0]) * npl / (ns + npl);
  }
  double ent_val = 0;
  if (!batch.rest.empty() && lambda != 0.0) {
    int probs = detail::encode_probs(t, b, T, batch.rest, enc_t);
    int ent = losses::entropy_mean(t, probs);
    ent_val = static_cast<double>(t.value(ent)[0]);
    int term = t.scale(ent, literal_entropy_sign ? -lambda : lambda);
    total = total < 0 ? term : t.add(total, term);
  }
  if (total < 0) throw std::invalid_argument("refinement_loss: all batches empty");
  if (cem_out) *cem_out = cem_val;
  if (entropy_out) *entropy_out = ent_val;
  return total;
}

struct RefineRecord {
  std::string status = "completed";
  std::string note;
  std::vector<train::MetricRow> rows;
  std::vector<PseudoLabelSet> per_epoch;  // selection used in epoch e at index e-1
  double pre_target_accuracy = std::nan("");
  double post_target_accuracy = std::nan("");
};

// Algorithm: reselect confident target samples each epoch, then take one
// epoch of minimization steps on the refinement objective with the
// pseudo-labels held fixed. Only the classifier and the deployment encoder
// parameters move; the alignment machinery stays frozen.
inline RefineRecord refine(nets::Bundle<float>& b, const train::TrainSets& sets,
                           train::Variant variant, const RefineConfig& cfg) {
  using train::MetricRow;
  if (!sets.train_source || sets.train_source->y.empty())
    throw std::invalid_argument("refine: labelled training source required");
  if (!sets.train_target) throw std::invalid_argument("refine: training target required");
  const data::MaskedDataset& S = *sets.train_source;
  const data::MaskedDataset& T = *sets.train_target;
  const eval::Encoding enc_s = train::train_encoding(variant);
  const eval::Encoding enc_t = train::target_eval_encoding(variant);

  // f and ghat only: the first extractor always, the generator for the hat
  // encoding, the second extractor when the encoding reads a second block.
  std::vector<nn::Parameter<float>*> group = b.params_f();
  for (auto* p : b.params_g1()) group.push_back(p);
  if (enc_t == eval::Encoding::hat)
    for (auto* p : b.params_r()) group.push_back(p);
  if (enc_t == eval::Encoding::full || enc_t == eval::Encoding::zero)
    for (auto* p : b.params_g2()) group.push_back(p);

  auto params_all = b.all_params();
  nn::Adam<float> adam;
  nn::Adam<float>::reset_state(group);

  RefineRecord rec;
  auto eval_split = [&](int epoch, const char* split, const data::MaskedDataset* ds,
                        eval::Encoding enc) -> double {
    if (!ds) return std::nan("");
    auto rows = eval::all_rows(ds->n(), cfg.eval_cap);
    auto probs = eval::forward_probs(b, *ds, rows, enc);
    std::vector<int> y(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) y[i] = ds->y[static_cast<size_t>(rows[i])];
    double acc = eval::accuracy(eval::argmax_rows(probs), y);
    rec.rows.push_back({epoch, split, "accuracy", acc});
    rec.rows.push_back({epoch, split, "cross_entropy", eval::mean_cross_entropy(probs, y)});
    return acc;
  };

  eval_split(0, "source", sets.eval_source, train::source_eval_encoding(variant));
  rec.pre_target_accuracy = eval_split(0, "target", sets.eval_target, enc_t);

  data::ShuffledBatcher src_batcher(S.n(), std::min<int64_t>(cfg.batch, S.n()),
                                    util::mix_seed(cfg.seed, 0x51));
  const int64_t steps_per_epoch = std::max<int64_t>(1, S.n() / cfg.batch);
  uint64_t step = 0;
  bool any_pl = false;

  for (int e = 1; e <= cfg.epochs; ++e) {
    PseudoLabelSet pls = select_pseudo_labels(b, T, enc_t, cfg.tau);
    any_pl = any_pl || !pls.indices.empty();
    std::vector<int64_t> rest;
    {
      std::vector<char> taken(static_cast<size_t>(T.n()), 0);
      for (int64_t i : pls.indices) taken[static_cast<size_t>(i)] = 1;
      for (int64_t i = 0; i < T.n(); ++i)
        if (!taken[static_cast<size_t>(i)]) rest.push_back(i);
    }
    rec.rows.push_back({e, "target", "pseudo_label_count",
                        static_cast<double>(pls.indices.size())});
    if (!T.y.empty() && !pls.indices.empty()) {
      int64_t hit = 0;
      for (size_t i = 0; i < pls.indices.size(); ++i)
        hit += pls.labels[i] == T.y[static_cast<size_t>(pls.indices[i])];
      rec.rows.push_back({e, "target", "pseudo_label_accuracy",
                          static_cast<double>(hit) / static_cast<double>(pls.indices.size())});
    }

    std::unique_ptr<data::ShuffledBatcher> pl_batcher, rest_batcher;
    int64_t pl_batch = std::min<int64_t>(cfg.batch, static_cast<int64_t>(pls.indices.size()));
    if (pl_batch > 0)
      pl_batcher = std::make_unique<data::ShuffledBatcher>(
          static_cast<int64_t>(pls.indices.size()), pl_batch,
          util::mix_seed(cfg.seed, 0x5200 + static_cast<uint64_t>(e)));
    int64_t rest_batch = std::min<int64_t>(cfg.batch, static_cast<int64_t>(rest.size()));
    if (rest_batch > 0)
      rest_batcher = std::make_unique<data::ShuffledBatcher>(
          static_cast<int64_t>(rest.size()), rest_batch,
          util::mix_seed(cfg.seed, 0x5300 + static_cast<uint64_t>(e)));

    double loss_sum = 0, cem_sum = 0, ent_sum = 0;
    for (int64_t s = 0; s < steps_per_epoch; ++s, ++step) {
      RefineBatch rb;
      rb.source = src_batcher.next_batch();
      if (pl_batcher) {
        for (int64_t j : pl_batcher->next_batch()) {
          rb.pseudo.push_back(pls.indices[static_cast<size_t>(j)]);
          rb.pseudo_labels.push_back(pls.labels[static_cast<size_t>(j)]);
        }
      }
      if (rest_batcher)
        for (int64_t j : rest_batcher->next_batch())
          rb.rest.push_back(rest[static_cast<size_t>(j)]);

      nn::Tape<float> t(util::mix_seed(cfg.seed, (0x77ULL << 48) + step), true);
      nn::Adam<float>::zero_grad(params_all);
      double cem = 0, ent = 0;
      int loss = refinement_loss(t, b, S, T, rb, enc_s, enc_t, cfg.lambda,
                                 cfg.literal_entropy_sign, &cem, &ent);
      t.backward(loss);
      adam.step(group, cfg.lr);
      loss_sum += static_cast<double>(t.value(loss)[0]);
      cem_sum += cem;
      ent_sum += ent;
    }
    const double n = static_cast<double>(steps_per_epoch);
    rec.rows.push_back({e, "train", "refine_loss", loss_sum / n});
    rec.rows.push_back({e, "train", "refine_cem", cem_sum / n});
    rec.rows.push_back({e, "train", "refine_entropy", ent_sum / n});
    rec.per_epoch.push_back(std::move(pls));
    if (!std::isfinite(loss_sum)) {
      rec.status = "diverged";
      rec.note = "nonfinite refinement loss at epoch " + std::to_string(e);
      return rec;
    }
    eval_split(e, "source", sets.eval_source, train::source_eval_encoding(variant));
    double acc = eval_split(e, "target", sets.eval_target, enc_t);
    if (!std::isnan(acc)) rec.post_target_accuracy = acc;
  }
  if (!any_pl && cfg.epochs > 0)
    rec.note = "no pseudo-labels cleared the threshold in any epoch; "
               "refinement used the source and entropy terms only";
  return rec;
}

}  // namespace adimp::selftrain
