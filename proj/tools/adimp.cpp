// SPDX-License-Identifier: Apache-2.0
//
// adimp command line: data preparation, training, self-training refinement,
// sweeps, ablations, diagnostics, reporting and embedding export.

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <CLI11.hpp>
#include <httplib.h>
#ifdef _res
#undef _res  // resolv.h macro, clashes with Eigen parameter names
#endif
#include <json.hpp>
#include <zlib.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "adimp/cli/experiment.hpp"
#include "adimp/cli/runner.hpp"
#include "adimp/data/idx.hpp"
#include "adimp/eval/diagnostics.hpp"
#include "adimp/eval/embeddings.hpp"
#include "adimp/nets/checkpoint.hpp"
#include "adimp/util/format.hpp"
#include "adimp/util/kvconfig.hpp"
#include "adimp/util/seeding.hpp"

namespace fs = std::filesystem;
using namespace adimp;

namespace {

std::string env_or(const char* key, const std::string& fallback) {
  const char* v = std::getenv(key);
  return (v && *v) ? std::string(v) : fallback;
}

std::string join(const std::string& dir, const std::string& leaf) {
  return (fs::path(dir) / leaf).string();
}

util::KVConfig build_config(const std::string& config_path, const std::vector<std::string>& sets) {
  util::KVConfig cfg;
  if (!config_path.empty()) cfg = util::KVConfig::load(config_path);
  for (const auto& kv : sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    while (!key.empty() && key.back() == ' ') key.pop_back();
    while (!value.empty() && value.front() == ' ') value.erase(value.begin());
    cfg.set(key, value);
  }
  return cfg;
}

void print_record(const cli::RunOutput& out) {
  std::cout << "run dir:    " << out.dir.path << "\n"
            << "status:     " << out.record.status;
  if (!out.record.note.empty()) std::cout << " (" << out.record.note << ")";
  std::cout << "\n";
  if (out.record.best_epoch >= 0)
    std::cout << "best:       epoch " << out.record.best_epoch << ", target accuracy "
              << out.record.best_score << "\n";
  if (std::isfinite(out.record.final_source_accuracy))
    std::cout << "final src:  " << out.record.final_source_accuracy << "\n";
  if (std::isfinite(out.record.final_target_accuracy))
    std::cout << "final tgt:  " << out.record.final_target_accuracy << "\n";
}

// ---------------------------------------------------------------- prepare

std::string gunzip(const std::string& in) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 16) != Z_OK) throw std::runtime_error("gunzip: inflateInit2 failed");
  std::string out(std::max<size_t>(in.size() * 4, size_t{1} << 20), '\0');
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  size_t written = 0;
  int ret = Z_OK;
  while (ret != Z_STREAM_END) {
    if (written == out.size()) out.resize(out.size() * 2);
    zs.next_out = reinterpret_cast<Bytef*>(out.data()) + written;
    zs.avail_out = static_cast<uInt>(out.size() - written);
    ret = inflate(&zs, Z_NO_FLUSH);
    written = out.size() - zs.avail_out;
    if (ret != Z_OK && ret != Z_STREAM_END) {
      inflateEnd(&zs);
      throw std::runtime_error("gunzip: corrupt stream (zlib code " + std::to_string(ret) + ")");
    }
  }
  inflateEnd(&zs);
  out.resize(written);
  return out;
}

void validate_idx_pair(const std::string& images_path, const std::string& labels_path) {
  auto im = data::read_idx_images(images_path);
  auto lab = data::read_idx_labels(labels_path);
  if (im.n != static_cast<int64_t>(lab.size()))
    throw std::runtime_error("IDX mismatch: " + images_path + " has " + std::to_string(im.n) +
                             " images but " + labels_path + " has " +
                             std::to_string(lab.size()) + " labels");
}

int cmd_prepare_data(const std::string& dataset, const std::string& data_dir,
                     const std::string& from) {
  const auto& info = data::digit_dataset_info(dataset);
  std::string dest = join(data_dir, dataset);
  fs::create_directories(dest);
  const std::vector<std::string> files = {info.train_images, info.train_labels, info.test_images,
                                          info.test_labels};

  if (!from.empty()) {
    for (const auto& f : files) {
      std::string src = join(from, f);
      if (!fs::exists(src))
        throw data::DataFetchError("prepare-data: expected " + src +
                                   "; run the matching converter in tools/ first");
      fs::copy_file(src, join(dest, f), fs::copy_options::overwrite_existing);
    }
    validate_idx_pair(join(dest, info.train_images), join(dest, info.train_labels));
    validate_idx_pair(join(dest, info.test_images), join(dest, info.test_labels));
    std::cout << "copied and validated " << dataset << " cache at " << dest << "\n";
    return 0;
  }

  if (dataset != "mnist") {
    std::string converter = "tools/convert_" + dataset + ".py";
    throw data::DataFetchError(
        "prepare-data: " + dataset + " has no direct download. Run `python3 " + converter +
        " --out <dir>` (see the script header for the upstream files it needs), then re-run "
        "with --from <dir>.");
  }

  httplib::SSLClient http("ossci-datasets.s3.amazonaws.com");
  http.set_follow_location(true);
  http.set_connection_timeout(30);
  http.set_read_timeout(180);
  if (fs::exists("/etc/ssl/certs/ca-certificates.crt"))
    http.set_ca_cert_path("/etc/ssl/certs/ca-certificates.crt");

  for (const auto& f : files) {
    std::string path = join(dest, f);
    if (fs::exists(path)) {
      std::cout << f << " already present, skipping\n";
      continue;
    }
    std::string url_path = "/mnist/" + f + ".gz";
    std::cout << "fetching https://ossci-datasets.s3.amazonaws.com" << url_path << "\n";
    auto res = http.Get(url_path);
    if (!res || res->status != 200)
      throw data::DataFetchError(
          "prepare-data: download failed for " + url_path +
          (res ? " (HTTP " + std::to_string(res->status) + ")" : " (no response)") +
          ". If this host has no network access, fetch the four mnist .gz files elsewhere, "
          "gunzip them, and re-run with --from <dir>.");
    std::ofstream out(path, std::ios::binary);
    std::string raw = gunzip(res->body);
    out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!out) throw std::runtime_error("prepare-data: write failed for " + path);
  }
  validate_idx_pair(join(dest, info.train_images), join(dest, info.train_labels));
  validate_idx_pair(join(dest, info.test_images), join(dest, info.test_labels));
  std::cout << "mnist cache ready at " << dest << "\n";
  return 0;
}

// ----------------------------------------------------------------- sweeps

struct AggCell {
  std::vector<double> final_acc, best_acc;
};

double vec_mean(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double vec_sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = vec_mean(v), s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void push_outcome(AggCell& cell, const train::RunRecord& rec) {
  if (std::isfinite(rec.final_target_accuracy)) cell.final_acc.push_back(rec.final_target_accuracy);
  if (rec.best_score >= 0) cell.best_acc.push_back(rec.best_score);
}

int cmd_sweep_patch(util::KVConfig base, const std::vector<std::string>& variants,
                    const std::vector<double>& fractions, const std::vector<uint64_t>& seeds,
                    const std::string& data_dir, const std::string& runs_dir,
                    std::string out_path) {
  if (out_path.empty()) out_path = join(runs_dir, "patch_sweep.csv");
  std::map<std::pair<std::string, double>, AggCell> agg;
  for (const auto& variant : variants) {
    for (double fr : fractions) {
      for (uint64_t seed : seeds) {
        util::KVConfig cfg = base;
        cfg.set("variant", variant);
        cfg.set("mask_fraction", util::format_double(fr));
        cfg.set("seed", std::to_string(seed));
        auto ex = cli::load_experiment(cfg, data_dir);
        std::cout << "[sweep] " << variant << " fraction " << fr << " seed " << seed << "\n";
        auto out = cli::run_and_persist(ex, runs_dir);
        print_record(out);
        push_outcome(agg[{variant, fr}], out.record);
      }
    }
  }
  std::string csv =
      "variant,fraction,n_runs,final_acc_mean,final_acc_std,best_acc_mean,best_acc_std\n";
  for (const auto& [key, cell] : agg) {
    csv += key.first + "," + util::format_double(key.second) + "," +
           std::to_string(cell.final_acc.size()) + "," + util::format_double(vec_mean(cell.final_acc)) +
           "," + util::format_double(vec_sample_std(cell.final_acc)) + "," +
           util::format_double(vec_mean(cell.best_acc)) + "," +
           util::format_double(vec_sample_std(cell.best_acc)) + "\n";
  }
  std::ofstream f(out_path, std::ios::binary);
  f << csv;
  std::cout << "sweep summary: " << out_path << "\n";
  return 0;
}

int cmd_ablate(util::KVConfig base, const std::vector<uint64_t>& seeds, bool mse_sweep,
               const std::string& data_dir, const std::string& runs_dir, std::string out_path) {
  base.set("variant", "adapt_impute");
  base.set("backend", "adversarial");
  cli::resolve_config(base);
  const double base_mse = base.get_real("lambda_mse");
  const double base_l1 = base.get_real("lambda1");
  if (out_path.empty()) out_path = join(runs_dir, "ablation.csv");

  struct Cell {
    std::string name;
    bool l2_adv;
    double lambda_mse;
  };
  std::vector<Cell> cells = {
      {"mse_only", false, base_mse},
      {"adv_only", true, 0.0},
      {"adv_mse_0.005", true, 0.005},
      {"adv_mse", true, base_mse},
  };
  if (mse_sweep)
    for (double w : {1.0, 0.1, 0.01, 0.0075, 0.005, 0.001})
      cells.push_back({"adv_mse_" + util::format_double(w), true, w});

  std::string csv =
      "cell,lambda1,l2_adversarial,lambda_mse,n_runs,final_acc_mean,final_acc_std,"
      "best_acc_mean,best_acc_std\n";
  for (const auto& cell : cells) {
    for (bool l1_on : {true, false}) {
      AggCell agg;
      double l1 = l1_on ? base_l1 : 0.0;
      for (uint64_t seed : seeds) {
        util::KVConfig cfg = base;
        cfg.set("l2_adversarial", cell.l2_adv ? "true" : "false");
        cfg.set("lambda_mse", util::format_double(cell.lambda_mse));
        cfg.set("lambda1", util::format_double(l1));
        cfg.set("seed", std::to_string(seed));
        auto ex = cli::load_experiment(cfg, data_dir);
        std::cout << "[ablate] " << cell.name << (l1_on ? " +L1" : " -L1") << " seed " << seed
                  << "\n";
        auto out = cli::run_and_persist(ex, runs_dir);
        print_record(out);
        push_outcome(agg, out.record);
      }
      csv += cell.name + (l1_on ? "" : "_no_l1") + "," + util::format_double(l1) + "," +
             (cell.l2_adv ? "true" : "false") + "," + util::format_double(cell.lambda_mse) + "," +
             std::to_string(agg.final_acc.size()) + "," +
             util::format_double(vec_mean(agg.final_acc)) + "," +
             util::format_double(vec_sample_std(agg.final_acc)) + "," +
             util::format_double(vec_mean(agg.best_acc)) + "," +
             util::format_double(vec_sample_std(agg.best_acc)) + "\n";
    }
  }
  std::ofstream f(out_path, std::ios::binary);
  f << csv;
  std::cout << "ablation summary: " << out_path << "\n";
  return 0;
}

// ------------------------------------------------------------ diagnostics

int cmd_diagnose(const std::string& run_dir, const std::string& data_dir) {
  auto ex = cli::experiment_from_run(run_dir, data_dir);
  auto bundle = nets::load_bundle<float>(cli::checkpoint_path(run_dir, "best"));
  const data::MaskedDataset& src = ex.eval_source.n() > 0 ? ex.eval_source : ex.train_source;
  const data::MaskedDataset& tgt = ex.eval_target.n() > 0 ? ex.eval_target : ex.train_target;
  if (tgt.n() == 0) throw std::runtime_error("diagnose: run has no target split");

  auto rep = eval::diagnose(bundle, src, tgt, ex.tcfg.seed);
  nlohmann::json j{{"run_id", ex.run_id},
                   {"source_risk", rep.source_risk},
                   {"proxy_divergence", rep.proxy_divergence},
                   {"imputation_mse_source", rep.imputation_mse_source},
                   {"imputation_disc_error", rep.imputation_disc_error},
                   {"transfer_proxy", rep.transfer_proxy},
                   {"lambda_proxy", rep.lambda_proxy}};
  std::ofstream f(join(run_dir, "diagnostics.json"), std::ios::binary);
  f << j.dump(2) << "\n";
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_export_embeddings(const std::string& run_dir, const std::string& data_dir,
                          std::string out_path, int64_t cap) {
  auto ex = cli::experiment_from_run(run_dir, data_dir);
  auto bundle = nets::load_bundle<float>(cli::checkpoint_path(run_dir, "best"));
  if (out_path.empty()) out_path = join(run_dir, "embeddings.csv");

  auto capped = [&](const data::MaskedDataset& d, uint64_t stream) {
    if (cap <= 0 || d.n() <= cap) return d;
    std::vector<int64_t> rows(static_cast<size_t>(d.n()));
    for (size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int64_t>(i);
    std::mt19937_64 rng(util::mix_seed(ex.tcfg.seed, stream));
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(static_cast<size_t>(cap));
    std::sort(rows.begin(), rows.end());
    return data::take_rows(d, rows);
  };
  data::MaskedDataset src = capped(ex.eval_source.n() > 0 ? ex.eval_source : ex.train_source, 0xE5);
  data::MaskedDataset tgt = capped(ex.eval_target.n() > 0 ? ex.eval_target : ex.train_target, 0xE6);
  if (tgt.n() == 0) throw std::runtime_error("export-embeddings: run has no target split");

  eval::export_embeddings(bundle, {{&src, "source"}, {&tgt, "target"}}, out_path);
  std::cout << "embeddings: " << out_path << "\n";
  return 0;
}

int cmd_report(const std::string& root, std::vector<std::string> dirs, std::string out_dir) {
  if (dirs.empty()) {
    if (root.empty()) throw std::invalid_argument("report: pass --root or run directories");
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
      if (entry.is_regular_file() && entry.path().filename() == "run.json")
        dirs.push_back(entry.path().parent_path().string());
    }
    std::sort(dirs.begin(), dirs.end());
  }
  if (dirs.empty()) throw std::runtime_error("report: no run directories found");
  if (out_dir.empty()) out_dir = root.empty() ? "report" : join(root, "report");

  std::vector<cli::RunSummary> runs;
  for (const auto& d : dirs) {
    try {
      runs.push_back(cli::read_run_summary(d));
    } catch (const std::exception& e) {
      std::cerr << "skipping " << d << ": " << e.what() << "\n";
    }
  }
  if (runs.empty()) throw std::runtime_error("report: no readable runs");
  cli::write_report(out_dir, runs);
  std::cout << "report (" << runs.size() << " runs): " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"domain adaptation with missing target features: train, refine, diagnose"};
  app.require_subcommand(1);

  std::string data_dir = env_or("DATA_DIR", "data");
  std::string runs_dir = env_or("RUNS_DIR", "runs");

  // prepare-data
  auto* prep = app.add_subcommand("prepare-data", "populate a digit dataset cache");
  std::string prep_dataset, prep_from;
  prep->add_option("--dataset", prep_dataset, "mnist, usps, svhn or mnistm")
      ->required()
      ->check(CLI::IsMember({"mnist", "usps", "svhn", "mnistm"}));
  prep->add_option("--data-dir", data_dir, "dataset cache root");
  prep->add_option("--from", prep_from, "directory with already converted IDX files");

  // train
  auto* tr = app.add_subcommand("train", "train one experiment and persist the run");
  std::string tr_config;
  std::vector<std::string> tr_sets;
  tr->add_option("--config", tr_config, "experiment config file (key = value lines)");
  tr->add_option("--set", tr_sets, "override config keys, key=value")->take_all();
  tr->add_option("--data-dir", data_dir, "dataset cache root");
  tr->add_option("--runs-dir", runs_dir, "run output root");

  // refine
  auto* rf = app.add_subcommand("refine", "self-training pass over a persisted run");
  std::string rf_run;
  rf->add_option("--run", rf_run, "run directory from a previous train")->required();
  rf->add_option("--data-dir", data_dir, "dataset cache root");
  rf->add_option("--runs-dir", runs_dir, "run output root");

  // sweep-patch
  auto* sw = app.add_subcommand("sweep-patch", "mask fraction sweep over variants and seeds");
  std::string sw_config, sw_out;
  std::vector<std::string> sw_sets, sw_variants = {"adapt_impute", "adapt_zero"};
  std::vector<double> sw_fracs = {0.3, 0.4, 0.5, 0.6, 0.7};
  std::vector<uint64_t> sw_seeds = {0, 1, 2};
  sw->add_option("--config", sw_config, "base experiment config");
  sw->add_option("--set", sw_sets, "override config keys, key=value")->take_all();
  sw->add_option("--variants", sw_variants, "variants to sweep")->delimiter(',');
  sw->add_option("--fractions", sw_fracs, "mask fractions")->delimiter(',');
  sw->add_option("--seeds", sw_seeds, "seeds per cell")->delimiter(',');
  sw->add_option("--out", sw_out, "summary csv path");
  sw->add_option("--data-dir", data_dir, "dataset cache root");
  sw->add_option("--runs-dir", runs_dir, "run output root");

  // ablate
  auto* ab = app.add_subcommand("ablate", "imputation loss composition grid (adapt_impute)");
  std::string ab_config, ab_out;
  std::vector<std::string> ab_sets;
  std::vector<uint64_t> ab_seeds = {0, 1, 2};
  bool ab_mse_sweep = false;
  ab->add_option("--config", ab_config, "base experiment config");
  ab->add_option("--set", ab_sets, "override config keys, key=value")->take_all();
  ab->add_option("--seeds", ab_seeds, "seeds per cell")->delimiter(',');
  ab->add_flag("--mse-sweep", ab_mse_sweep, "also sweep the reconstruction weight");
  ab->add_option("--out", ab_out, "summary csv path");
  ab->add_option("--data-dir", data_dir, "dataset cache root");
  ab->add_option("--runs-dir", runs_dir, "run output root");

  // diagnose
  auto* dg = app.add_subcommand("diagnose", "write diagnostics.json for a persisted run");
  std::string dg_run;
  dg->add_option("--run", dg_run, "run directory")->required();
  dg->add_option("--data-dir", data_dir, "dataset cache root");

  // report
  auto* rp = app.add_subcommand("report", "aggregate persisted runs into summary tables");
  std::string rp_root, rp_out;
  std::vector<std::string> rp_dirs;
  rp->add_option("--root", rp_root, "scan this tree for run directories");
  rp->add_option("dirs", rp_dirs, "explicit run directories");
  rp->add_option("--out", rp_out, "report output directory");

  // export-embeddings
  auto* em = app.add_subcommand("export-embeddings", "2d latent projection csv for a run");
  std::string em_run, em_out;
  int64_t em_cap = 2000;
  em->add_option("--run", em_run, "run directory")->required();
  em->add_option("--out", em_out, "output csv path");
  em->add_option("--cap", em_cap, "max rows per domain, 0 keeps all");
  em->add_option("--data-dir", data_dir, "dataset cache root");

  CLI11_PARSE(app, argc, argv);

  try {
    if (prep->parsed()) return cmd_prepare_data(prep_dataset, data_dir, prep_from);
    if (tr->parsed()) {
      auto ex = cli::load_experiment(build_config(tr_config, tr_sets), data_dir);
      auto out = cli::run_and_persist(ex, runs_dir);
      print_record(out);
      return out.record.status == "completed" ? 0 : 3;
    }
    if (rf->parsed()) {
      auto out = cli::refine_and_persist(rf_run, data_dir, runs_dir);
      std::cout << "run dir:  " << out.dir.path << "\n"
                << "status:   " << out.record.status;
      if (!out.record.note.empty()) std::cout << " (" << out.record.note << ")";
      std::cout << "\npre tgt:  " << out.record.pre_target_accuracy << "\n"
                << "post tgt: " << out.record.post_target_accuracy << "\n";
      return out.record.status == "completed" ? 0 : 3;
    }
    if (sw->parsed())
      return cmd_sweep_patch(build_config(sw_config, sw_sets), sw_variants, sw_fracs, sw_seeds,
                             data_dir, runs_dir, sw_out);
    if (ab->parsed())
      return cmd_ablate(build_config(ab_config, ab_sets), ab_seeds, ab_mse_sweep, data_dir,
                        runs_dir, ab_out);
    if (dg->parsed()) return cmd_diagnose(dg_run, data_dir);
    if (rp->parsed()) return cmd_report(rp_root, rp_dirs, rp_out);
    if (em->parsed()) return cmd_export_embeddings(em_run, data_dir, em_out, em_cap);
  } catch (const data::DataFetchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
