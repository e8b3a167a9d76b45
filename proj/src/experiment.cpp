// SPDX-License-Identifier: Apache-2.0
#include "adimp/cli/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "adimp/data/idx.hpp"
#include "adimp/data/mask.hpp"
#include "adimp/data/tabular.hpp"
#include "adimp/util/seeding.hpp"

namespace adimp::cli {

namespace {

bool is_digits(const std::string& dataset) {
  return dataset == "usps2mnist" || dataset == "mnist2usps" || dataset == "svhn2mnist" ||
         dataset == "mnist2mnistm";
}

struct PairInfo {
  std::string source, target;
  int channels = 1;
};

PairInfo digit_pair(const std::string& dataset) {
  if (dataset == "usps2mnist") return {"usps", "mnist", 1};
  if (dataset == "mnist2usps") return {"mnist", "usps", 1};
  if (dataset == "svhn2mnist") return {"svhn", "mnist", 3};
  if (dataset == "mnist2mnistm") return {"mnist", "mnistm", 3};
  throw std::invalid_argument("not a digit pair: " + dataset);
}

using F = util::KVSchema::Field;
using T = util::KVSchema::Type;

}  // namespace

util::KVSchema experiment_schema() {
  util::KVSchema s;
  s.fields = {
      F{"dataset", T::Str, "", true,
        {"synthetic", "usps2mnist", "mnist2usps", "svhn2mnist", "mnist2mnistm", "tabular"}},
      F{"variant", T::Str, "adapt_impute", false,
        {"source_full", "source_zero", "source_ignore", "adapt_full", "adapt_zero",
         "adapt_ignore", "adapt_impute"}},
      F{"backend", T::Str, "adversarial", false, {"adversarial", "transport"}},
      F{"seed", T::Int, "0", false, {}},
      F{"epochs", T::Int, "-1", false, {}},       // -1: 100 on real data, 30 synthetic
      F{"init_epochs", T::Int, "-1", false, {}},  // -1: 10 for adapt_impute, else 0
      F{"batch_size", T::Int, "128", false, {}},
      F{"ot_batch", T::Int, "500", false, {}},
      F{"lr", T::Real, "0.01", false, {}},
      F{"lr_decay", T::Real, "10", false, {}},
      F{"fast_decay", T::Real, "30", false, {}},
      F{"fast_decay_heads", T::Str, "auto", false, {"auto", "true", "false"}},
      F{"balanced_batches", T::Str, "auto", false, {"auto", "true", "false"}},
      F{"lambda1", T::Real, "-1", false, {}},    // -1: 1 adversarial, 0.1 transport
      F{"lambda2", T::Real, "1", false, {}},
      F{"lambda3", T::Real, "1", false, {}},
      F{"lambda_mse", T::Real, "-1", false, {}},  // -1: 1 except 0.005 on tabular
      F{"lambda_ot", T::Real, "0.1", false, {}},
      F{"ramp_lambdas", T::Bool, "true", false, {}},
      F{"l2_adversarial", T::Bool, "true", false, {}},
      F{"ot_coupling", T::Str, "dedicated", false, {"dedicated", "self"}},
      F{"mask_fraction", T::Real, "0.5", false, {}},
      F{"subsample_source", T::Int, "0", false, {}},
      F{"subsample_target", T::Int, "0", false, {}},
      F{"eval_every", T::Int, "1", false, {}},
      F{"eval_cap", T::Int, "0", false, {}},
      F{"strong_domain_disc", T::Str, "auto", false, {"auto", "true", "false"}},
      F{"deep_imputer", T::Str, "auto", false, {"auto", "true", "false"}},
      F{"dropout", T::Real, "0.5", false, {}},
      F{"mlp_hidden", T::Int, "128", false, {}},
      F{"adam_beta1", T::Real, "0.8", false, {}},
      F{"adam_beta2", T::Real, "0.999", false, {}},
      F{"refine_epochs", T::Int, "10", false, {}},
      F{"refine_tau", T::Real, "0.95", false, {}},
      F{"refine_lambda", T::Real, "-1", false, {}},  // -1: 1 on tabular, else 0.1
      F{"refine_entropy_mode", T::Str, "minimize", false, {"minimize", "literal"}},
      F{"refine_lr_scale", T::Real, "0.1", false, {}},
      F{"synth_n", T::Int, "6000", false, {}},
      F{"synth_heldout", T::Int, "2000", false, {}},
      F{"synth_k", T::Int, "4", false, {}},
      F{"synth_dim", T::Int, "16", false, {}},
      F{"synth_tail", T::Int, "8", false, {}},
      F{"synth_center_radius", T::Real, "2.2", false, {}},
      F{"synth_sigma_head", T::Real, "0.85", false, {}},
      F{"synth_sigma_tail", T::Real, "0.25", false, {}},
      F{"synth_mode_gap", T::Real, "1.6", false, {}},
      F{"synth_shift_scale", T::Real, "1.0", false, {}},
      F{"synth_shift_offset", T::Real, "0.7", false, {}},
      F{"synth_mode_affects_label", T::Bool, "false", false, {}},
      F{"tabular_source", T::Str, "", false, {}},
      F{"tabular_target", T::Str, "", false, {}},
      F{"tabular_mask", T::Str, "", false, {}},
      F{"tabular_label_column", T::Str, "label", false, {}},
      F{"tabular_holdout", T::Real, "0.2", false, {}},
  };
  return s;
}

void resolve_config(util::KVConfig& cfg) {
  experiment_schema().validate_and_default(cfg);
  const std::string dataset = cfg.get("dataset");
  const std::string backend = cfg.get("backend");
  const bool digits = is_digits(dataset);
  const bool tabular = dataset == "tabular";

  auto resolve_auto = [&](const char* key, bool value) {
    if (cfg.get(key) == "auto") cfg.set(key, value ? "true" : "false");
  };
  resolve_auto("fast_decay_heads", tabular);
  resolve_auto("balanced_batches", digits);
  resolve_auto("strong_domain_disc", dataset == "usps2mnist" || dataset == "mnist2usps");
  resolve_auto("deep_imputer", dataset == "svhn2mnist" || dataset == "mnist2mnistm");

  if (cfg.get_int("epochs") < 0) cfg.set("epochs", dataset == "synthetic" ? "30" : "100");
  if (cfg.get_int("init_epochs") < 0)
    cfg.set("init_epochs", cfg.get("variant") == "adapt_impute" ? "10" : "0");
  if (cfg.get_real("lambda1") < 0) cfg.set("lambda1", backend == "transport" ? "0.1" : "1");
  if (cfg.get_real("lambda_mse") < 0) cfg.set("lambda_mse", tabular ? "0.005" : "1");
  if (cfg.get_real("refine_lambda") < 0) cfg.set("refine_lambda", tabular ? "1" : "0.1");

  if (tabular) {
    if (cfg.get("tabular_source").empty() || cfg.get("tabular_target").empty() ||
        cfg.get("tabular_mask").empty())
      throw std::invalid_argument(
          "config: dataset=tabular needs tabular_source, tabular_target and tabular_mask");
  }
  if (cfg.get_real("mask_fraction") < 0 || cfg.get_real("mask_fraction") > 1)
    throw std::invalid_argument("config: mask_fraction must be in [0, 1]");
}

namespace {

train::TrainConfig train_config_from(const util::KVConfig& cfg) {
  train::TrainConfig t;
  t.backend = train::backend_from_string(cfg.get("backend"));
  t.variant = train::variant_from_string(cfg.get("variant"));
  t.epochs = static_cast<int>(cfg.get_int("epochs"));
  t.init_epochs = static_cast<int>(cfg.get_int("init_epochs"));
  t.batch = cfg.get_int("batch_size");
  t.ot_batch = cfg.get_int("ot_batch");
  t.lr = cfg.get_real("lr");
  t.lr_decay = cfg.get_real("lr_decay");
  t.fast_decay = cfg.get_real("fast_decay");
  t.fast_decay_heads = cfg.get_bool("fast_decay_heads");
  t.w.lambda1 = cfg.get_real("lambda1");
  t.w.lambda2 = cfg.get_real("lambda2");
  t.w.lambda3 = cfg.get_real("lambda3");
  t.w.lambda_mse = cfg.get_real("lambda_mse");
  t.w.lambda_ot = cfg.get_real("lambda_ot");
  t.w.ramp = cfg.get_bool("ramp_lambdas");
  t.w.adv_match = cfg.get_bool("l2_adversarial");
  t.seed = static_cast<uint64_t>(cfg.get_int("seed"));
  t.balanced_batches = cfg.get_bool("balanced_batches");
  t.ot_dedicated_coupling = cfg.get("ot_coupling") == "dedicated";
  t.eval_every = static_cast<int>(cfg.get_int("eval_every"));
  t.eval_cap = cfg.get_int("eval_cap");
  t.adam_beta1 = cfg.get_real("adam_beta1");
  t.adam_beta2 = cfg.get_real("adam_beta2");
  return t;
}

selftrain::RefineConfig refine_config_from(const util::KVConfig& cfg) {
  selftrain::RefineConfig r;
  r.epochs = static_cast<int>(cfg.get_int("refine_epochs"));
  r.tau = cfg.get_real("refine_tau");
  r.lambda = cfg.get_real("refine_lambda");
  r.lr = cfg.get_real("lr") * cfg.get_real("refine_lr_scale");
  r.batch = cfg.get_int("batch_size");
  r.literal_entropy_sign = cfg.get("refine_entropy_mode") == "literal";
  r.seed = static_cast<uint64_t>(cfg.get_int("seed"));
  r.eval_cap = cfg.get_int("eval_cap");
  return r;
}

std::string join_path(const std::string& dir, const std::string& path) {
  if (path.empty() || path.front() == '/') return path;
  if (dir.empty()) return path;
  return dir.back() == '/' ? dir + path : dir + "/" + path;
}

// Deterministic holdout split for datasets that arrive without one.
void split_holdout(const data::Dataset& all, double fraction, uint64_t seed, data::Dataset& train,
                   data::Dataset& held) {
  int64_t n_held = std::max<int64_t>(1, std::llround(static_cast<double>(all.n()) * fraction));
  if (n_held >= all.n()) throw std::invalid_argument("holdout fraction leaves no training data");
  std::vector<int64_t> idx(static_cast<size_t>(all.n()));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<int64_t> held_rows(idx.begin(), idx.begin() + n_held);
  std::vector<int64_t> train_rows(idx.begin() + n_held, idx.end());
  std::sort(held_rows.begin(), held_rows.end());
  std::sort(train_rows.begin(), train_rows.end());
  held = data::take_rows(all, held_rows);
  train = data::take_rows(all, train_rows);
}

}  // namespace

Experiment load_experiment(util::KVConfig cfg, const std::string& data_dir) {
  resolve_config(cfg);
  Experiment ex;
  ex.cfg = cfg;
  ex.dataset = cfg.get("dataset");
  ex.tcfg = train_config_from(cfg);
  ex.rcfg = refine_config_from(cfg);
  ex.run_id = ex.dataset + "_" + cfg.get("variant") + "_" + cfg.get("backend") + "_" +
              cfg.get("seed");

  const double fraction = cfg.get_real("mask_fraction");
  const uint64_t seed = ex.tcfg.seed;
  const int64_t sub_s = cfg.get_int("subsample_source");
  const int64_t sub_t = cfg.get_int("subsample_target");

  if (ex.dataset == "synthetic") {
    data::SyntheticSpec spec;
    spec.n_per_domain = cfg.get_int("synth_n");
    spec.n_heldout = cfg.get_int("synth_heldout");
    spec.K = static_cast<int>(cfg.get_int("synth_k"));
    spec.dim = cfg.get_int("synth_dim");
    spec.tail = cfg.get_int("synth_tail");
    spec.center_radius = cfg.get_real("synth_center_radius");
    spec.sigma_head = cfg.get_real("synth_sigma_head");
    spec.sigma_tail = cfg.get_real("synth_sigma_tail");
    spec.mode_gap = cfg.get_real("synth_mode_gap");
    spec.shift_scale = cfg.get_real("synth_shift_scale");
    spec.shift_offset = cfg.get_real("synth_shift_offset");
    spec.mode_affects_label = cfg.get_bool("synth_mode_affects_label");
    spec.seed = seed;
    ex.synth = std::make_shared<data::SyntheticData>(data::make_synthetic_multimodal(spec));

    auto mask = data::FixedMask::suffix_fraction(spec.dim, fraction);
    data::Dataset src = ex.synth->source, tgt = ex.synth->target;
    if (sub_s > 0) src = data::subsample(src, sub_s, util::mix_seed(seed, 0x51));
    if (sub_t > 0) tgt = data::subsample(tgt, sub_t, util::mix_seed(seed, 0x52));
    ex.train_source = data::apply_mask(src, mask, true);
    ex.train_target = data::apply_mask(tgt, mask, true);
    ex.eval_source = data::apply_mask(ex.synth->source_heldout, mask, true);
    ex.eval_target = data::apply_mask(ex.synth->target_heldout, mask, true);

    nets::ArchSpec a;
    a.family = "mlp_tabular";
    a.d1 = mask.d1();
    a.d2 = mask.d2();
    a.num_classes = src.num_classes;
    a.mlp_hidden = cfg.get_int("mlp_hidden");
    a.dropout = cfg.get_real("dropout");
    a.classifier_on_pair = train::uses_second_block(ex.tcfg.variant);
    a.strong_domain_disc = cfg.get_bool("strong_domain_disc");
    a.deep_imputer = cfg.get_bool("deep_imputer");
    ex.arch = a;
    return ex;
  }

  if (is_digits(ex.dataset)) {
    auto pair = digit_pair(ex.dataset);
    data::Dataset src = data::load_digits(pair.source, "train", data_dir, pair.channels);
    data::Dataset tgt = data::load_digits(pair.target, "train", data_dir, pair.channels);
    data::Dataset src_test = data::load_digits(pair.source, "test", data_dir, pair.channels);
    data::Dataset tgt_test = data::load_digits(pair.target, "test", data_dir, pair.channels);
    if (sub_s > 0) src = data::subsample(src, sub_s, util::mix_seed(seed, 0x51));
    if (sub_t > 0) tgt = data::subsample(tgt, sub_t, util::mix_seed(seed, 0x52));

    auto mask = data::FixedMask::horizontal_patch(pair.channels, 32, 32, fraction);
    ex.train_source = data::apply_mask(src, mask, true);
    ex.train_target = data::apply_mask(tgt, mask, true);
    ex.eval_source = data::apply_mask(src_test, mask, true);
    ex.eval_target = data::apply_mask(tgt_test, mask, true);

    nets::ArchSpec a;
    a.family = "conv_digits";
    a.in_channels = pair.channels;
    a.image_side = 32;
    a.num_classes = 10;
    a.dropout = cfg.get_real("dropout");
    a.classifier_on_pair = train::uses_second_block(ex.tcfg.variant);
    a.strong_domain_disc = cfg.get_bool("strong_domain_disc");
    a.deep_imputer = cfg.get_bool("deep_imputer");
    ex.arch = a;
    return ex;
  }

  // tabular: external files, target's masked columns structurally missing
  auto src_tab = data::load_tabular(join_path(data_dir, cfg.get("tabular_source")),
                                    cfg.get("tabular_label_column"));
  auto tgt_tab = data::load_tabular(join_path(data_dir, cfg.get("tabular_target")),
                                    cfg.get("tabular_label_column"));
  if (src_tab.columns != tgt_tab.columns)
    throw std::invalid_argument("tabular: source and target column sets differ");
  auto mask = data::mask_from_sidecar(join_path(data_dir, cfg.get("tabular_mask")),
                                      src_tab.columns);

  data::Dataset src = src_tab.data, tgt = tgt_tab.data;
  int num_classes = std::max(src.num_classes, tgt.num_classes);
  src.num_classes = tgt.num_classes = num_classes;
  if (sub_s > 0) src = data::subsample(src, sub_s, util::mix_seed(seed, 0x51));
  if (sub_t > 0) tgt = data::subsample(tgt, sub_t, util::mix_seed(seed, 0x52));

  data::Dataset src_train, src_held, tgt_train, tgt_held;
  const double holdout = cfg.get_real("tabular_holdout");
  split_holdout(src, holdout, util::mix_seed(seed, 0x61), src_train, src_held);
  split_holdout(tgt, holdout, util::mix_seed(seed, 0x62), tgt_train, tgt_held);

  ex.train_source = data::apply_mask(src_train, mask, true);
  ex.train_target = data::apply_mask(tgt_train, mask, false);
  ex.eval_source = data::apply_mask(src_held, mask, true);
  ex.eval_target = data::apply_mask(tgt_held, mask, false);

  nets::ArchSpec a;
  a.family = "mlp_tabular";
  a.d1 = mask.d1();
  a.d2 = mask.d2();
  a.num_classes = num_classes;
  a.mlp_hidden = cfg.get_int("mlp_hidden");
  a.dropout = cfg.get_real("dropout");
  a.classifier_on_pair = train::uses_second_block(ex.tcfg.variant);
  a.strong_domain_disc = cfg.get_bool("strong_domain_disc");
  a.deep_imputer = cfg.get_bool("deep_imputer");
  ex.arch = a;
  return ex;
}

}  // namespace adimp::cli
