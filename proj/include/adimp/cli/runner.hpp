// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "adimp/cli/experiment.hpp"
#include "adimp/cli/rundir.hpp"
#include "adimp/nets/bundle.hpp"
#include "adimp/selftrain/refine.hpp"
#include "adimp/train/trainer.hpp"

namespace adimp::cli {

// Fresh bundle for the experiment; the weight init stream is derived from
// the config seed.
nets::Bundle<float> make_bundle(const Experiment& ex);

train::TrainSets train_sets(const Experiment& ex);

// Train and persist under runs_root: config.kv, metrics.csv, run.json,
// final.ckpt and best.ckpt. Returns the record and the directory.
struct RunOutput {
  RunDir dir;
  train::RunRecord record;
};
RunOutput run_and_persist(const Experiment& ex, const std::string& runs_root);

// Self-training pass over a persisted run (loads best.ckpt). Writes its own
// run directory with refined metrics, per-epoch pseudo-label CSVs and
// refined.ckpt.
struct RefineOutput {
  RunDir dir;
  selftrain::RefineRecord record;
};
RefineOutput refine_and_persist(const std::string& base_run_dir, const std::string& data_dir,
                                const std::string& runs_root);

// Rebuilds an experiment from a persisted run directory's config.
Experiment experiment_from_run(const std::string& run_dir, const std::string& data_dir);
std::string checkpoint_path(const std::string& run_dir, const std::string& kind);

// Cross-run aggregation for reports.
struct RunSummary {
  std::string dir, run_id, dataset, variant, backend, status, stage;
  uint64_t seed = 0;
  double best_target_acc = -1, final_target_acc = -1, final_source_acc = -1;
  std::vector<std::pair<int, double>> target_curve;  // (epoch, target accuracy)
};
RunSummary read_run_summary(const std::string& run_dir);

// Writes summary.csv, summary.md (bold best per dataset) and curves.csv.
void write_report(const std::string& out_dir, const std::vector<RunSummary>& runs);

}  // namespace adimp::cli
