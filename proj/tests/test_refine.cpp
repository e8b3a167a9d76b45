// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "adimp/data/synthetic.hpp"
#include "adimp/eval/metrics.hpp"
#include "adimp/nets/bundle.hpp"
#include "adimp/selftrain/refine.hpp"
#include "adimp/train/trainer.hpp"

using namespace adimp;
using selftrain::RefineConfig;
using selftrain::select_pseudo_labels;
using train::Backend;
using train::TrainConfig;
using train::Trainer;
using train::Variant;

namespace {

struct Fix {
  data::SyntheticData raw;
  data::MaskedDataset src, tgt, src_eval, tgt_eval;
  nets::ArchSpec arch;
};

Fix make_fix(uint64_t seed = 3) {
  data::SyntheticSpec spec;
  spec.n_per_domain = 96;
  spec.n_heldout = 48;
  spec.K = 2;
  spec.dim = 10;
  spec.tail = 4;
  spec.seed = seed;
  Fix f;
  f.raw = data::make_synthetic_multimodal(spec);
  auto mask = data::FixedMask::suffix_fraction(spec.dim, 0.4);
  f.src = data::apply_mask(f.raw.source, mask, true);
  f.tgt = data::apply_mask(f.raw.target, mask, true);
  f.src_eval = data::apply_mask(f.raw.source_heldout, mask, true);
  f.tgt_eval = data::apply_mask(f.raw.target_heldout, mask, true);
  f.arch.family = "mlp_tabular";
  f.arch.d1 = mask.d1();
  f.arch.d2 = mask.d2();
  f.arch.mlp_hidden = 16;
  f.arch.num_classes = f.raw.source.num_classes;
  return f;
}

train::TrainSets sets_of(Fix& f) {
  train::TrainSets s;
  s.train_source = &f.src;
  s.train_target = &f.tgt;
  s.eval_source = &f.src_eval;
  s.eval_target = &f.tgt_eval;
  return s;
}

void pretrain(nets::Bundle<float>& b, Fix& f, int epochs = 2) {
  TrainConfig cfg;
  cfg.variant = Variant::adapt_impute;
  cfg.backend = Backend::adversarial;
  cfg.epochs = epochs;
  cfg.init_epochs = 1;
  cfg.batch = 32;
  cfg.lr = 1e-2;
  cfg.seed = 11;
  Trainer(b, sets_of(f), cfg).run();
}

bool same_bits(const nn::Tensor<float>& a, const nn::Tensor<float>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

std::vector<nn::Tensor<float>> values_of(const std::vector<nn::Parameter<float>*>& ps) {
  std::vector<nn::Tensor<float>> out;
  for (auto* p : ps) out.push_back(p->value);
  return out;
}

bool all_same_bits(const std::vector<nn::Tensor<float>>& a,
                   const std::vector<nn::Tensor<float>>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (!same_bits(a[i], b[i])) return false;
  return true;
}

double metric_at(const selftrain::RefineRecord& rec, int epoch, const std::string& split,
                 const std::string& metric) {
  for (const auto& r : rec.rows)
    if (r.epoch == epoch && r.split == split && r.metric == metric) return r.value;
  return std::nan("");
}

}  // namespace

TEST_CASE("confidence selection matches a direct recompute") {
  Fix f = make_fix();
  nets::Bundle<float> b(f.arch, 42);
  pretrain(b, f);

  const auto enc = eval::Encoding::hat;
  auto probs = eval::forward_probs(b, f.tgt, eval::all_rows(f.tgt.n()), enc);

  SUBCASE("thresholded argmax, index order preserved") {
    const double tau = 0.6;
    auto pls = select_pseudo_labels(b, f.tgt, enc, tau);
    std::vector<int64_t> want_idx;
    std::vector<int> want_lab;
    std::vector<double> want_conf;
    for (int64_t i = 0; i < probs.rows(); ++i) {
      int best = 0;
      for (int64_t k = 1; k < probs.cols(); ++k)
        if (probs[i * probs.cols() + k] > probs[i * probs.cols() + best])
          best = static_cast<int>(k);
      double conf = static_cast<double>(probs[i * probs.cols() + best]);
      if (conf >= tau) {
        want_idx.push_back(i);
        want_lab.push_back(best);
        want_conf.push_back(conf);
      }
    }
    REQUIRE(!want_idx.empty());
    REQUIRE(pls.indices == want_idx);
    CHECK(pls.labels == want_lab);
    CHECK(pls.confidences == want_conf);
    CHECK(pls.tau == tau);
  }

  SUBCASE("with two classes every max probability clears 0.5") {
    auto pls = select_pseudo_labels(b, f.tgt, enc, 0.5);
    CHECK(static_cast<int64_t>(pls.size()) == f.tgt.n());
  }

  SUBCASE("a stricter threshold selects a subset") {
    auto lo = select_pseudo_labels(b, f.tgt, enc, 0.6);
    auto hi = select_pseudo_labels(b, f.tgt, enc, 0.63);
    REQUIRE(hi.size() > 0);
    CHECK(hi.size() <= lo.size());
    std::set<int64_t> lo_idx(lo.indices.begin(), lo.indices.end());
    for (int64_t i : hi.indices) CHECK(lo_idx.count(i) == 1);
  }

  SUBCASE("an unreachable threshold selects nothing") {
    CHECK(select_pseudo_labels(b, f.tgt, enc, 1.01).size() == 0);
  }
}

TEST_CASE("the refinement objective decomposes into its reported terms") {
  Fix f = make_fix();
  nets::Bundle<float> b(f.arch, 42);

  selftrain::RefineBatch rb;
  for (int64_t i = 0; i < 16; ++i) rb.source.push_back(i);
  for (int64_t i = 0; i < 8; ++i) {
    rb.pseudo.push_back(i);
    rb.pseudo_labels.push_back(f.tgt.y[static_cast<size_t>(i)]);
  }
  for (int64_t i = 8; i < 24; ++i) rb.rest.push_back(i);
  const auto enc = eval::Encoding::hat;

  auto eval_loss = [&](const selftrain::RefineBatch& batch, double lambda, bool literal,
                       double* cem, double* ent) {
    nn::Tape<float> t(5, /*training=*/false);
    int node = selftrain::refinement_loss(t, b, f.src, f.tgt, batch, enc, enc, lambda, literal,
                                          cem, ent);
    return static_cast<double>(t.value(node)[0]);
  };

  SUBCASE("loss equals cem plus lambda times entropy, sign per mode") {
    double cem = 0, ent = 0;
    double resolved = eval_loss(rb, 0.3, false, &cem, &ent);
    CHECK(ent > 0.0);
    CHECK(resolved == doctest::Approx(cem + 0.3 * ent).epsilon(1e-5));
    double cem2 = 0, ent2 = 0;
    double literal = eval_loss(rb, 0.3, true, &cem2, &ent2);
    CHECK(cem2 == doctest::Approx(cem).epsilon(1e-6));
    CHECK(ent2 == doctest::Approx(ent).epsilon(1e-6));
    CHECK(literal == doctest::Approx(cem - 0.3 * ent).epsilon(1e-5));
  }

  SUBCASE("a zero entropy weight leaves the pure weighted cross entropy") {
    double cem = 0, ent = -1;
    double loss = eval_loss(rb, 0.0, false, &cem, &ent);
    CHECK(ent == 0.0);  // never evaluated
    CHECK(loss == doctest::Approx(cem).epsilon(1e-6));
  }

  SUBCASE("the union term weighs both sets by their batch share") {
    selftrain::RefineBatch src_only, pl_only;
    src_only.source = rb.source;
    pl_only.pseudo = rb.pseudo;
    pl_only.pseudo_labels = rb.pseudo_labels;
    double ce_s = 0, ce_t = 0, cem = 0, unused = 0;
    eval_loss(src_only, 0.0, false, &ce_s, &unused);
    eval_loss(pl_only, 0.0, false, &ce_t, &unused);
    eval_loss(rb, 0.0, false, &cem, &unused);
    // ns = 16, npl = 8
    CHECK(cem == doctest::Approx((16.0 * ce_s + 8.0 * ce_t) / 24.0).epsilon(1e-5));
  }

  SUBCASE("a source-only batch is the plain cross entropy of those rows") {
    selftrain::RefineBatch src_only;
    src_only.source = rb.source;
    double cem = 0, unused = 0;
    double loss = eval_loss(src_only, 0.0, false, &cem, &unused);
    auto probs = eval::forward_probs(b, f.src, src_only.source, enc);
    std::vector<int> y;
    for (int64_t i : src_only.source) y.push_back(f.src.y[static_cast<size_t>(i)]);
    CHECK(loss == doctest::Approx(eval::mean_cross_entropy(probs, y)).epsilon(1e-5));
    CHECK(cem == doctest::Approx(loss).epsilon(1e-6));
  }

  SUBCASE("an entirely empty batch is rejected") {
    selftrain::RefineBatch empty;
    nn::Tape<float> t(5, false);
    CHECK_THROWS_AS(selftrain::refinement_loss(t, b, f.src, f.tgt, empty, enc, enc, 0.1, false),
                    std::invalid_argument);
  }
}

TEST_CASE("refinement moves only the deployment path and does not regress") {
  Fix f = make_fix();
  nets::Bundle<float> b(f.arch, 42);
  pretrain(b, f, 3);

  auto d1_before = values_of(b.params_d1());
  auto d2_before = values_of(b.params_d2());
  auto g2_before = values_of(b.params_g2());
  auto f_before = values_of(b.params_f());

  RefineConfig cfg;
  cfg.epochs = 3;
  cfg.tau = 0.6;
  cfg.lambda = 0.1;
  cfg.lr = 1e-3;
  cfg.batch = 32;
  cfg.seed = 9;
  auto rec = selftrain::refine(b, sets_of(f), Variant::adapt_impute, cfg);

  CHECK(rec.status == "completed");
  REQUIRE(!std::isnan(rec.pre_target_accuracy));
  REQUIRE(!std::isnan(rec.post_target_accuracy));
  CHECK(rec.post_target_accuracy >= rec.pre_target_accuracy);
  CHECK(rec.per_epoch.size() == 3);

  // hat-encoded target: the alignment machinery stays frozen
  CHECK(all_same_bits(d1_before, values_of(b.params_d1())));
  CHECK(all_same_bits(d2_before, values_of(b.params_d2())));
  CHECK(all_same_bits(g2_before, values_of(b.params_g2())));
  CHECK(!all_same_bits(f_before, values_of(b.params_f())));

  CHECK(metric_at(rec, 0, "target", "accuracy") == rec.pre_target_accuracy);
  CHECK(metric_at(rec, 3, "target", "accuracy") == rec.post_target_accuracy);
  for (int e = 1; e <= 3; ++e) {
    CHECK(std::isfinite(metric_at(rec, e, "train", "refine_loss")));
    CHECK(std::isfinite(metric_at(rec, e, "train", "refine_cem")));
    CHECK(std::isfinite(metric_at(rec, e, "train", "refine_entropy")));
    CHECK(metric_at(rec, e, "target", "pseudo_label_count") ==
          static_cast<double>(rec.per_epoch[static_cast<size_t>(e - 1)].size()));
  }
  // labelled target: selection quality is reported alongside the count
  REQUIRE(rec.per_epoch[0].size() > 0);
  double pl_acc = metric_at(rec, 1, "target", "pseudo_label_accuracy");
  CHECK(pl_acc >= 0.0);
  CHECK(pl_acc <= 1.0);
}

TEST_CASE("an unreachable confidence threshold falls back to source and entropy") {
  Fix f = make_fix();
  nets::Bundle<float> b(f.arch, 42);
  pretrain(b, f);

  RefineConfig cfg;
  cfg.epochs = 2;
  cfg.tau = 1.01;
  cfg.lambda = 0.1;
  cfg.lr = 1e-3;
  cfg.batch = 32;
  cfg.seed = 9;
  auto rec = selftrain::refine(b, sets_of(f), Variant::adapt_impute, cfg);

  CHECK(rec.status == "completed");
  CHECK(!rec.note.empty());
  for (const auto& pls : rec.per_epoch) CHECK(pls.size() == 0);
  for (int e = 1; e <= 2; ++e)
    CHECK(metric_at(rec, e, "target", "pseudo_label_count") == 0.0);
  CHECK(std::isfinite(rec.post_target_accuracy));
}

TEST_CASE("refinement reruns are bit identical") {
  Fix f = make_fix();
  nets::Bundle<float> b(f.arch, 42);
  pretrain(b, f);
  auto snap = Trainer::snapshot(b);

  RefineConfig cfg;
  cfg.epochs = 2;
  cfg.tau = 0.6;
  cfg.lr = 1e-3;
  cfg.batch = 32;
  cfg.seed = 9;

  nets::Bundle<float> b1(f.arch, 1), b2(f.arch, 2);
  Trainer::restore(b1, snap);
  Trainer::restore(b2, snap);
  auto r1 = selftrain::refine(b1, sets_of(f), Variant::adapt_impute, cfg);
  auto r2 = selftrain::refine(b2, sets_of(f), Variant::adapt_impute, cfg);

  REQUIRE(r1.rows.size() == r2.rows.size());
  for (size_t i = 0; i < r1.rows.size(); ++i) {
    CHECK(r1.rows[i].metric == r2.rows[i].metric);
    CHECK(std::memcmp(&r1.rows[i].value, &r2.rows[i].value, sizeof(double)) == 0);
  }
  CHECK(all_same_bits(values_of(b1.all_params()), values_of(b2.all_params())));
}

TEST_CASE("refinement validates its inputs") {
  Fix f = make_fix();
  nets::Bundle<float> b(f.arch, 1);
  RefineConfig cfg;
  cfg.epochs = 1;

  SUBCASE("unlabeled source") {
    Fix g = make_fix();
    g.src.y.clear();
    CHECK_THROWS_AS(selftrain::refine(b, sets_of(g), Variant::adapt_impute, cfg),
                    std::invalid_argument);
  }
  SUBCASE("missing target") {
    auto s = sets_of(f);
    s.train_target = nullptr;
    CHECK_THROWS_AS(selftrain::refine(b, s, Variant::adapt_impute, cfg), std::invalid_argument);
  }
}
