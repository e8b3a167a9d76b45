// SPDX-License-Identifier: Apache-2.0
#include "adimp/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "adimp/eval/metrics.hpp"
#include "adimp/ot/ot_losses.hpp"
#include "adimp/train/schedule.hpp"
#include "adimp/util/seeding.hpp"

namespace adimp::train {

namespace {

constexpr uint64_t kInitStream = 0x11;
constexpr uint64_t kMainStream = 0x22;
constexpr uint64_t kSourceBatcher = 0x31;
constexpr uint64_t kTargetBatcher = 0x32;

void emit(RunRecord& rec, int epoch, const char* split, const char* metric, double value) {
  rec.rows.push_back({epoch, split, metric, value});
}

}  // namespace

Trainer::Trainer(nets::Bundle<float>& bundle, const TrainSets& sets, const TrainConfig& cfg)
    : b_(bundle), sets_(sets), cfg_(cfg) {
  adam_.beta1 = cfg_.adam_beta1;
  adam_.beta2 = cfg_.adam_beta2;
  validate();
}

void Trainer::validate() const {
  if (!sets_.train_source) throw std::invalid_argument("trainer: no training source");
  if (cfg_.epochs < 0 || cfg_.init_epochs < 0) throw std::invalid_argument("trainer: negative epochs");
  if (cfg_.batch < 1 || cfg_.ot_batch < 1) throw std::invalid_argument("trainer: batch size < 1");
  if (cfg_.backend == Backend::transport && cfg_.variant != Variant::adapt_impute)
    throw std::invalid_argument(
        "trainer: the transport backend implements only the adapt_impute variant");
  if (b_.arch.classifier_on_pair == !uses_second_block(cfg_.variant))
    throw std::invalid_argument("trainer: bundle classifier width does not match the variant");
  const bool adapt = is_adapt(cfg_.variant);
  if (adapt && !sets_.train_target) throw std::invalid_argument("trainer: adapt variant without a target");
  if (uses_second_block(cfg_.variant) && !sets_.train_source->x2_present)
    throw std::invalid_argument("trainer: variant reads the second source block but it is missing");
  const bool full = cfg_.variant == Variant::source_full || cfg_.variant == Variant::adapt_full;
  if (full) {
    if (cfg_.variant == Variant::adapt_full && !sets_.train_target->x2_present)
      throw std::invalid_argument(
          "trainer: adapt_full needs the real second block on the target; it is structurally "
          "missing here");
    if (sets_.eval_target && !sets_.eval_target->x2_present)
      throw std::invalid_argument(
          "trainer: full variants evaluate on the real second block; the target eval set is "
          "structurally masked");
  }
  if (cfg_.balanced_batches &&
      (sets_.train_source->y.empty() || sets_.train_source->num_classes < 1))
    throw std::invalid_argument("trainer: balanced batches need labeled source data");
  if (sets_.train_source->y.empty()) throw std::invalid_argument("trainer: unlabeled source");
}

std::vector<int> Trainer::batch_labels(const data::MaskedDataset& ds,
                                       const std::vector<int64_t>& rows) const {
  std::vector<int> y(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) y[i] = ds.y[static_cast<size_t>(rows[i])];
  return y;
}

std::pair<int, int> Trainer::classifier_loss(nn::Tape<float>& t, const data::MaskedDataset& ds,
                                             const std::vector<int64_t>& rows,
                                             eval::Encoding enc) {
  int x1 = t.input(b_.input_block(ds, rows, 1));
  int probs = -1;
  switch (enc) {
    case eval::Encoding::full: {
      int x2 = t.input(b_.input_block(ds, rows, 2));
      auto [z1, z2] = b_.encode_full(t, x1, x2);
      probs = b_.classify_pair(t, z1, z2);
      break;
    }
    case eval::Encoding::hat: {
      auto [z1, z2] = b_.encode_hat(t, x1);
      probs = b_.classify_pair(t, z1, z2);
      break;
    }
    case eval::Encoding::zero: {
      int z1 = b_.encode1(t, x1);
      int z2 = b_.encode2(t, t.input(b_.zero_block2(ds, static_cast<int64_t>(rows.size()))));
      probs = b_.classify_pair(t, z1, z2);
      break;
    }
    case eval::Encoding::ignore:
      probs = b_.classify_single(t, b_.encode1(t, x1));
      break;
  }
  int ce = losses::cross_entropy(t, probs, batch_labels(ds, rows));
  return {ce, probs};
}

losses::LossReport Trainer::step_adversarial(nn::Tape<float>& t,
                                             const std::vector<int64_t>& rows_s,
                                             const std::vector<int64_t>& rows_t,
                                             double progress) {
  const data::MaskedDataset& S = *sets_.train_source;
  const double ramp = cfg_.w.ramp ? Schedule::ramp(progress) : 1.0;
  const double lam1 = cfg_.w.lambda1 * ramp;
  const double lam2 = cfg_.w.lambda2 * ramp;
  const bool impute = cfg_.variant == Variant::adapt_impute;
  const bool adapt = is_adapt(cfg_.variant) && cfg_.include_alignment;

  // Source classifier path first so the dropout draws do not depend on which
  // alignment terms are active.
  int xs1 = t.input(b_.input_block(S, rows_s, 1));
  int zs1 = b_.encode1(t, xs1);
  int zs2 = -1, zs2hat = -1, probs = -1;
  switch (cfg_.variant) {
    case Variant::source_full:
    case Variant::source_zero:
    case Variant::adapt_full:
    case Variant::adapt_zero:
      zs2 = b_.encode2(t, t.input(b_.input_block(S, rows_s, 2)));
      probs = b_.classify_pair(t, zs1, zs2);
      break;
    case Variant::source_ignore:
    case Variant::adapt_ignore:
      probs = b_.classify_single(t, zs1);
      break;
    case Variant::adapt_impute:
      zs2hat = b_.impute(t, zs1);
      probs = b_.classify_pair(t, zs1, zs2hat);
      break;
  }
  int l3 = losses::cross_entropy(t, probs, batch_labels(S, rows_s));
  int total = t.scale(l3, cfg_.w.lambda3);

  double l1_val = 0, l_adv_val = 0, l_mse_val = 0, d1_acc = 0, d2_acc = 0;
  if (adapt) {
    const data::MaskedDataset& T = *sets_.train_target;
    int xt1 = t.input(b_.input_block(T, rows_t, 1));
    int zt1 = b_.encode1(t, xt1);
    int align_s = -1, align_t = -1;
    switch (cfg_.variant) {
      case Variant::adapt_full: {
        int zt2 = b_.encode2(t, t.input(b_.input_block(T, rows_t, 2)));
        align_s = t.concat_cols(zs1, zs2);
        align_t = t.concat_cols(zt1, zt2);
        break;
      }
      case Variant::adapt_zero: {
        int zt2 =
            b_.encode2(t, t.input(b_.zero_block2(T, static_cast<int64_t>(rows_t.size()))));
        align_s = t.concat_cols(zs1, zs2);
        align_t = t.concat_cols(zt1, zt2);
        break;
      }
      case Variant::adapt_ignore:
        align_s = zs1;
        align_t = zt1;
        break;
      case Variant::adapt_impute: {
        int zt2hat = b_.impute(t, zt1);
        align_s = t.concat_cols(zs1, zs2hat);
        align_t = t.concat_cols(zt1, zt2hat);
        break;
      }
      default:
        break;
    }
    // The discriminators descend their cross entropy at full scale; the
    // reversal layer hands the extractors the ramped, sign-flipped gradient.
    int d1s = b_.disc_domain(t, t.grl(align_s, lam1));
    int d1t = b_.disc_domain(t, t.grl(align_t, lam1));
    int bce1 = losses::disc_bce(t, d1s, d1t);
    total = t.add(total, bce1);
    l1_val = -static_cast<double>(t.value(bce1)[0]);
    d1_acc = losses::disc_accuracy(t.value(d1s), t.value(d1t));

    if (impute) {
      zs2 = b_.encode2(t, t.input(b_.input_block(S, rows_s, 2)));
      int lmse = losses::mse_rows(t, zs2, zs2hat);
      total = t.add(total, t.scale(lmse, lam2 * cfg_.w.lambda_mse));
      if (cfg_.w.adv_match) {
        int d2g = b_.disc_generated(t, t.grl(zs2hat, lam2));  // generated is the positive class
        int d2r = b_.disc_generated(t, t.grl(zs2, lam2));
        int bce2 = losses::disc_bce(t, d2g, d2r);
        total = t.add(total, bce2);
        l_adv_val = -static_cast<double>(t.value(bce2)[0]);
        d2_acc = losses::disc_accuracy(t.value(d2g), t.value(d2r));
      }
      l_mse_val = static_cast<double>(t.value(lmse)[0]);
    }
  }

  t.backward(total);

  auto rep = losses::LossReport::make(
      l1_val, l_adv_val, l_mse_val, static_cast<double>(t.value(l3)[0]),
      is_adapt(cfg_.variant) ? lam1 : 0.0, impute ? lam2 : 0.0, cfg_.w.lambda3,
      impute ? cfg_.w.lambda_mse : 0.0, 1.0);
  rep.d1_acc = d1_acc;
  rep.d2_acc = d2_acc;
  rep.grad_scale1 = lam1;
  rep.grad_scale2 = lam2;
  return rep;
}

losses::LossReport Trainer::step_transport(nn::Tape<float>& t,
                                           const std::vector<int64_t>& rows_s,
                                           const std::vector<int64_t>& rows_t, double progress) {
  const data::MaskedDataset& S = *sets_.train_source;
  const double ramp = cfg_.w.ramp ? Schedule::ramp(progress) : 1.0;
  const double lam1 = cfg_.w.lambda1 * ramp;
  const double lam2 = cfg_.w.lambda2 * ramp;

  int xs1 = t.input(b_.input_block(S, rows_s, 1));
  int zs1 = b_.encode1(t, xs1);
  int zs2hat = b_.impute(t, zs1);
  int probs = b_.classify_pair(t, zs1, zs2hat);
  int l3 = losses::cross_entropy(t, probs, batch_labels(S, rows_s));
  int total = t.scale(l3, cfg_.w.lambda3);

  double l1_val = 0, l_match_val = 0, l_mse_val = 0;
  if (cfg_.include_alignment) {
    const data::MaskedDataset& T = *sets_.train_target;
    int xt1 = t.input(b_.input_block(T, rows_t, 1));
    int zt1 = b_.encode1(t, xt1);
    int zt2hat = b_.impute(t, zt1);
    int zs2 = b_.encode2(t, t.input(b_.input_block(S, rows_s, 2)));

    // Couplings are solved on the current latents and then held fixed for the
    // gradient step, alternating the two minimizations within each step.
    int l_align = ot::transport_alignment(t, zs1, zs2hat, zt1, zt2hat);
    int l_match = ot::transport_match(t, zs2, zs2hat, cfg_.ot_dedicated_coupling);
    int lmse = losses::mse_rows(t, zs2, zs2hat);
    total = t.add(total, t.scale(l_align, lam1));
    total = t.add(total, t.scale(l_match, lam2 * cfg_.w.lambda_ot));
    total = t.add(total, t.scale(lmse, lam2 * cfg_.w.lambda_mse));
    l1_val = static_cast<double>(t.value(l_align)[0]);
    l_match_val = static_cast<double>(t.value(l_match)[0]);
    l_mse_val = static_cast<double>(t.value(lmse)[0]);
  }

  t.backward(total);

  auto rep = losses::LossReport::make(l1_val, l_match_val, l_mse_val,
                                      static_cast<double>(t.value(l3)[0]), lam1, lam2,
                                      cfg_.w.lambda3, cfg_.w.lambda_mse, cfg_.w.lambda_ot);
  rep.grad_scale1 = lam1;
  rep.grad_scale2 = lam2;
  return rep;
}

void Trainer::main_groups(Params& main, Params& fast) const {
  main.clear();
  fast.clear();
  auto add = [&](Params g, bool fast_head = false) {
    Params& dst = (fast_head && cfg_.fast_decay_heads) ? fast : main;
    dst.insert(dst.end(), g.begin(), g.end());
  };
  add(b_.params_g1());
  if (uses_second_block(cfg_.variant)) add(b_.params_g2());
  add(b_.params_f());
  const bool adapt = is_adapt(cfg_.variant);
  const bool impute = cfg_.variant == Variant::adapt_impute;
  if (impute) add(b_.params_r(), /*fast_head=*/true);
  if (adapt && cfg_.backend == Backend::adversarial) {
    add(b_.params_d1());
    if (impute && cfg_.w.adv_match) add(b_.params_d2(), /*fast_head=*/true);
  }
}

Trainer::Params Trainer::init_group() const {
  Params g = b_.params_g1();
  if (uses_second_block(cfg_.variant)) {
    Params g2 = b_.params_g2();
    g.insert(g.end(), g2.begin(), g2.end());
  }
  Params f = b_.params_f();
  g.insert(g.end(), f.begin(), f.end());
  return g;
}

void Trainer::eval_epoch(int epoch, RunRecord& rec) {
  double score = std::nan("");
  if (sets_.eval_source) {
    auto rows = eval::all_rows(sets_.eval_source->n(), cfg_.eval_cap);
    auto probs =
        eval::forward_probs(b_, *sets_.eval_source, rows, source_eval_encoding(cfg_.variant));
    double acc = eval::accuracy(eval::argmax_rows(probs), batch_labels(*sets_.eval_source, rows));
    double ce = eval::mean_cross_entropy(probs, batch_labels(*sets_.eval_source, rows));
    emit(rec, epoch, "source", "accuracy", acc);
    emit(rec, epoch, "source", "cross_entropy", ce);
    rec.final_source_accuracy = acc;
    score = acc;
  }
  if (sets_.eval_target) {
    auto rows = eval::all_rows(sets_.eval_target->n(), cfg_.eval_cap);
    auto probs =
        eval::forward_probs(b_, *sets_.eval_target, rows, target_eval_encoding(cfg_.variant));
    double acc = eval::accuracy(eval::argmax_rows(probs), batch_labels(*sets_.eval_target, rows));
    double ce = eval::mean_cross_entropy(probs, batch_labels(*sets_.eval_target, rows));
    emit(rec, epoch, "target", "accuracy", acc);
    emit(rec, epoch, "target", "cross_entropy", ce);
    rec.final_target_accuracy = acc;
    score = acc;  // model selection key: target accuracy when available
  }
  if (!std::isnan(score) && score > rec.best_score) {
    rec.best_score = score;
    rec.best_epoch = epoch;
    rec.best_snapshot = snapshot(b_);
  }
}

RunRecord Trainer::run() {
  RunRecord rec;
  const data::MaskedDataset& S = *sets_.train_source;
  const int64_t batch = cfg_.backend == Backend::transport ? cfg_.ot_batch : cfg_.batch;
  const int64_t steps_per_epoch = std::max<int64_t>(1, S.n() / batch);
  const bool adapt = is_adapt(cfg_.variant);

  std::unique_ptr<data::BalancedBatcher> src_balanced;
  std::unique_ptr<data::ShuffledBatcher> src_shuffled;
  if (cfg_.balanced_batches)
    src_balanced = std::make_unique<data::BalancedBatcher>(
        S.y, S.num_classes, batch, util::mix_seed(cfg_.seed, kSourceBatcher));
  else
    src_shuffled = std::make_unique<data::ShuffledBatcher>(
        S.n(), batch, util::mix_seed(cfg_.seed, kSourceBatcher));
  auto next_source = [&] {
    return src_balanced ? src_balanced->next_batch() : src_shuffled->next_batch();
  };
  std::unique_ptr<data::ShuffledBatcher> tgt;
  if (adapt)
    tgt = std::make_unique<data::ShuffledBatcher>(sets_.train_target->n(), batch,
                                                  util::mix_seed(cfg_.seed, kTargetBatcher));

  auto params_all = b_.all_params();
  Params group_main, group_fast;
  main_groups(group_main, group_fast);
  Params group_init = init_group();

  const eval::Encoding init_enc = cfg_.variant == Variant::adapt_impute
                                      ? eval::Encoding::full
                                      : train_encoding(cfg_.variant);

  // ---- classification warmup: real second block, flat learning rate
  uint64_t init_step = 0;
  for (int e = 1; e <= cfg_.init_epochs; ++e) {
    double ce_sum = 0, acc_sum = 0;
    for (int64_t s = 0; s < steps_per_epoch; ++s, ++init_step) {
      auto rows = next_source();
      nn::Tape<float> t(util::mix_seed(cfg_.seed, (kInitStream << 48) + init_step), true);
      auto [loss, probs] = classifier_loss(t, S, rows, init_enc);
      nn::Adam<float>::zero_grad(params_all);
      t.backward(loss);
      adam_.step(group_init, cfg_.lr);
      ce_sum += static_cast<double>(t.value(loss)[0]);
      acc_sum += eval::accuracy(eval::argmax_rows(t.value(probs)), batch_labels(S, rows));
    }
    double ce = ce_sum / static_cast<double>(steps_per_epoch);
    emit(rec, e, "train", "init_loss_l3", ce);
    emit(rec, e, "train", "init_accuracy", acc_sum / static_cast<double>(steps_per_epoch));
    if (!std::isfinite(ce)) {
      rec.status = "diverged";
      rec.note = "nonfinite warmup loss at epoch " + std::to_string(e);
      return rec;
    }
  }

  eval_epoch(0, rec);

  // ---- joint phase
  const double total_steps = static_cast<double>(steps_per_epoch) * cfg_.epochs;
  uint64_t step = 0;
  const bool impute = cfg_.variant == Variant::adapt_impute;
  const bool adv = cfg_.backend == Backend::adversarial;
  for (int e = 1; e <= cfg_.epochs; ++e) {
    if (tgt) tgt->reshuffle();
    std::vector<losses::LossReport> reports;
    reports.reserve(static_cast<size_t>(steps_per_epoch));
    double lr = cfg_.lr;
    for (int64_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const double p = total_steps > 0 ? static_cast<double>(step) / total_steps : 0.0;
      auto rows_s = next_source();
      std::vector<int64_t> rows_t;
      if (tgt) rows_t = tgt->next_batch();
      nn::Tape<float> t(util::mix_seed(cfg_.seed, (kMainStream << 48) + step), true);
      nn::Adam<float>::zero_grad(params_all);
      auto rep = adv ? step_adversarial(t, rows_s, rows_t, p)
                     : step_transport(t, rows_s, rows_t, p);
      lr = Schedule::lr(cfg_.lr, p, cfg_.lr_decay);
      adam_.step(group_main, lr);
      if (!group_fast.empty()) adam_.step(group_fast, Schedule::lr(cfg_.lr, p, cfg_.fast_decay));
      reports.push_back(rep);
      if (!std::isfinite(rep.l_total)) {
        rec.status = "diverged";
        rec.note = "nonfinite loss at epoch " + std::to_string(e) + " step " + std::to_string(s);
        break;
      }
    }
    auto avg = losses::average(reports);
    emit(rec, e, "train", "loss_total", avg.l_total);
    emit(rec, e, "train", "loss_l3", avg.l3);
    emit(rec, e, "train", "lr", lr);
    if (adapt) {
      emit(rec, e, "train", "loss_l1", avg.l1);
      emit(rec, e, "train", "lambda1", avg.lambda1);
      if (adv) emit(rec, e, "train", "disc_domain_acc", avg.d1_acc);
    }
    if (impute) {
      emit(rec, e, "train", "loss_l2", avg.l2);
      emit(rec, e, "train", "loss_match", avg.l_align);
      emit(rec, e, "train", "loss_mse", avg.l_mse);
      emit(rec, e, "train", "lambda2", avg.lambda2);
      if (adv && cfg_.w.adv_match) emit(rec, e, "train", "disc_match_acc", avg.d2_acc);
    }
    if (rec.status == "diverged") return rec;
    if (e % std::max(1, cfg_.eval_every) == 0 || e == cfg_.epochs) eval_epoch(e, rec);
  }
  return rec;
}

std::vector<nn::Tensor<float>> Trainer::snapshot(nets::Bundle<float>& bundle) {
  std::vector<nn::Tensor<float>> out;
  for (auto& [name, tensor] : bundle.named_tensors()) out.push_back(*tensor);
  return out;
}

void Trainer::restore(nets::Bundle<float>& bundle, const std::vector<nn::Tensor<float>>& snap) {
  auto named = bundle.named_tensors();
  if (named.size() != snap.size()) throw std::invalid_argument("restore: snapshot layout mismatch");
  for (size_t i = 0; i < named.size(); ++i) {
    if (!named[i].second->same_shape(snap[i]))
      throw std::invalid_argument("restore: shape mismatch at " + named[i].first);
    *named[i].second = snap[i];
  }
}

}  // namespace adimp::train
