// SPDX-License-Identifier: Apache-2.0
#include "adimp/cli/runner.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "adimp/nets/checkpoint.hpp"
#include "adimp/util/format.hpp"
#include "adimp/util/seeding.hpp"

namespace fs = std::filesystem;

namespace adimp::cli {
namespace {

std::string join(const std::string& dir, const std::string& leaf) {
  return (fs::path(dir) / leaf).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << text;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  f >> j;
  return j;
}

double json_num(const nlohmann::json& j, const char* key, double fallback) {
  if (!j.contains(key) || !j[key].is_number()) return fallback;
  return j[key].get<double>();
}

}  // namespace

nets::Bundle<float> make_bundle(const Experiment& ex) {
  return nets::Bundle<float>(ex.arch, util::mix_seed(ex.tcfg.seed, 0xB00));
}

train::TrainSets train_sets(const Experiment& ex) {
  train::TrainSets s;
  s.train_source = &ex.train_source;
  if (ex.train_target.n() > 0) s.train_target = &ex.train_target;
  if (ex.eval_source.n() > 0) s.eval_source = &ex.eval_source;
  if (ex.eval_target.n() > 0) s.eval_target = &ex.eval_target;
  return s;
}

RunOutput run_and_persist(const Experiment& ex, const std::string& runs_root) {
  RunOutput out;
  out.dir = make_run_dir(runs_root, ex.run_id);
  ex.cfg.save(join(out.dir.path, "config.kv"));

  auto t0 = std::chrono::steady_clock::now();
  auto bundle = make_bundle(ex);
  train::Trainer trainer(bundle, train_sets(ex), ex.tcfg);
  out.record = trainer.run();
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  write_metrics_csv(join(out.dir.path, "metrics.csv"), ex.run_id, ex.tcfg.seed, out.record.rows);

  nlohmann::json meta{{"run_id", ex.run_id},
                      {"dataset", ex.dataset},
                      {"variant", train::to_string(ex.tcfg.variant)},
                      {"backend", train::to_string(ex.tcfg.backend)},
                      {"seed", ex.tcfg.seed},
                      {"stage", "train"},
                      {"timestamp", utc_timestamp()},
                      {"status", out.record.status},
                      {"note", out.record.note},
                      {"best_epoch", out.record.best_epoch},
                      {"best_score", out.record.best_score},
                      {"final_source_accuracy", out.record.final_source_accuracy},
                      {"final_target_accuracy", out.record.final_target_accuracy},
                      {"wall_seconds", wall}};
  write_json(join(out.dir.path, "run.json"), meta);

  nlohmann::json extra{{"run_id", ex.run_id}, {"stage", "final"}};
  nets::save_bundle(join(out.dir.path, "final.ckpt"), bundle, extra);
  if (!out.record.best_snapshot.empty()) {
    train::Trainer::restore(bundle, out.record.best_snapshot);
    extra["stage"] = "best";
    extra["epoch"] = out.record.best_epoch;
  }
  nets::save_bundle(join(out.dir.path, "best.ckpt"), bundle, extra);
  return out;
}

Experiment experiment_from_run(const std::string& run_dir, const std::string& data_dir) {
  auto cfg = util::KVConfig::load(join(run_dir, "config.kv"));
  return load_experiment(cfg, data_dir);
}

std::string checkpoint_path(const std::string& run_dir, const std::string& kind) {
  std::string p = join(run_dir, kind + ".ckpt");
  if (fs::exists(p)) return p;
  if (kind == "best") {  // runs persisted without a best snapshot
    std::string fallback = join(run_dir, "final.ckpt");
    if (fs::exists(fallback)) return fallback;
  }
  throw std::runtime_error("no " + kind + " checkpoint under " + run_dir);
}

RefineOutput refine_and_persist(const std::string& base_run_dir, const std::string& data_dir,
                                const std::string& runs_root) {
  Experiment ex = experiment_from_run(base_run_dir, data_dir);
  auto bundle = nets::load_bundle<float>(checkpoint_path(base_run_dir, "best"));

  RefineOutput out;
  std::string run_id = ex.run_id + "_refined";
  out.dir = make_run_dir(runs_root, run_id);

  auto t0 = std::chrono::steady_clock::now();
  out.record = selftrain::refine(bundle, train_sets(ex), ex.tcfg.variant, ex.rcfg);
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  ex.cfg.save(join(out.dir.path, "config.kv"));
  write_metrics_csv(join(out.dir.path, "metrics.csv"), run_id, ex.tcfg.seed, out.record.rows);

  for (size_t e = 0; e < out.record.per_epoch.size(); ++e) {
    const auto& pl = out.record.per_epoch[e];
    std::string csv = "sample,label,confidence\n";
    for (size_t i = 0; i < pl.indices.size(); ++i) {
      csv += std::to_string(pl.indices[i]) + "," + std::to_string(pl.labels[i]) + "," +
             util::format_double(pl.confidences[i]) + "\n";
    }
    write_text(join(out.dir.path, "pl_epoch_" + std::to_string(e + 1) + ".csv"), csv);
  }

  nlohmann::json meta{{"run_id", run_id},
                      {"base_run", fs::path(base_run_dir).filename().string()},
                      {"dataset", ex.dataset},
                      {"variant", train::to_string(ex.tcfg.variant)},
                      {"backend", train::to_string(ex.tcfg.backend)},
                      {"seed", ex.tcfg.seed},
                      {"stage", "refine"},
                      {"timestamp", utc_timestamp()},
                      {"status", out.record.status},
                      {"note", out.record.note},
                      {"pre_target_accuracy", out.record.pre_target_accuracy},
                      {"post_target_accuracy", out.record.post_target_accuracy},
                      {"wall_seconds", wall}};
  write_json(join(out.dir.path, "run.json"), meta);

  nlohmann::json extra{{"run_id", run_id}, {"stage", "refined"}};
  nets::save_bundle(join(out.dir.path, "refined.ckpt"), bundle, extra);
  return out;
}

RunSummary read_run_summary(const std::string& run_dir) {
  RunSummary s;
  s.dir = run_dir;
  auto cfg = util::KVConfig::load(join(run_dir, "config.kv"));
  s.dataset = cfg.get("dataset");
  s.variant = cfg.get_or("variant", "");
  s.backend = cfg.get_or("backend", "");
  s.seed = static_cast<uint64_t>(cfg.get_int("seed"));

  auto meta = read_json(join(run_dir, "run.json"));
  s.run_id = meta.value("run_id", "");
  s.status = meta.value("status", "");
  s.stage = meta.value("stage", "train");
  if (s.stage == "refine") {
    s.variant += "+refine";
    s.final_target_acc = json_num(meta, "post_target_accuracy", -1);
    s.best_target_acc = s.final_target_acc;
  } else {
    s.best_target_acc = json_num(meta, "best_score", -1);
    s.final_target_acc = json_num(meta, "final_target_accuracy", -1);
    s.final_source_acc = json_num(meta, "final_source_accuracy", -1);
  }

  std::string id;
  uint64_t seed = 0;
  auto rows = read_metrics_csv(join(run_dir, "metrics.csv"), &id, &seed);
  for (const auto& r : rows) {
    if (r.split == "target" && r.metric == "accuracy") s.target_curve.push_back({r.epoch, r.value});
  }
  return s;
}

void write_report(const std::string& out_dir, const std::vector<RunSummary>& runs) {
  fs::create_directories(out_dir);

  struct Cell {
    std::vector<double> best, final_;
  };
  // key: dataset, variant, backend
  std::map<std::array<std::string, 3>, Cell> cells;
  for (const auto& r : runs) {
    auto& c = cells[{r.dataset, r.variant, r.backend}];
    if (r.best_target_acc >= 0) c.best.push_back(r.best_target_acc);
    if (r.final_target_acc >= 0) c.final_.push_back(r.final_target_acc);
  }

  auto mean = [](const std::vector<double>& v) {
    if (v.empty()) return std::nan("");
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto sample_std = [&](const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean(v), s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  };

  std::string csv =
      "dataset,variant,backend,n_runs,best_acc_mean,best_acc_std,final_acc_mean,final_acc_std\n";
  for (const auto& [key, c] : cells) {
    csv += key[0] + "," + key[1] + "," + key[2] + "," + std::to_string(c.final_.size()) + "," +
           util::format_double(mean(c.best)) + "," + util::format_double(sample_std(c.best)) +
           "," + util::format_double(mean(c.final_)) + "," +
           util::format_double(sample_std(c.final_)) + "\n";
  }
  write_text(join(out_dir, "summary.csv"), csv);

  // Markdown table per dataset, best mean final accuracy in bold.
  std::string md = "# Run summary\n";
  std::map<std::string, std::vector<std::pair<std::array<std::string, 3>, Cell>>> by_ds;
  for (const auto& [key, c] : cells) by_ds[key[0]].push_back({key, c});
  for (const auto& [ds, rows] : by_ds) {
    md += "\n## " + ds + "\n\n| variant | backend | runs | best acc | final acc |\n";
    md += "|---|---|---|---|---|\n";
    double best_in_ds = -1;
    for (const auto& [key, c] : rows) {
      double m = mean(c.final_);
      if (std::isfinite(m) && m > best_in_ds) best_in_ds = m;
    }
    for (const auto& [key, c] : rows) {
      double bm = mean(c.best), fm = mean(c.final_);
      auto fmt = [&](double m, double sd) {
        if (!std::isfinite(m)) return std::string("-");
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.4f +/- %.4f", m, sd);
        return std::string(buf);
      };
      std::string final_cell = fmt(fm, sample_std(c.final_));
      if (std::isfinite(fm) && fm == best_in_ds) final_cell = "**" + final_cell + "**";
      md += "| " + key[1] + " | " + key[2] + " | " + std::to_string(c.final_.size()) + " | " +
            fmt(bm, sample_std(c.best)) + " | " + final_cell + " |\n";
    }
  }
  write_text(join(out_dir, "summary.md"), md);

  std::string curves = "dataset,variant,backend,seed,epoch,target_accuracy\n";
  for (const auto& r : runs) {
    for (const auto& [epoch, acc] : r.target_curve) {
      curves += r.dataset + "," + r.variant + "," + r.backend + "," + std::to_string(r.seed) +
                "," + std::to_string(epoch) + "," + util::format_double(acc) + "\n";
    }
  }
  write_text(join(out_dir, "curves.csv"), curves);
}

}  // namespace adimp::cli
