// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adimp/train/trainer.hpp"

namespace adimp::cli {

// One experiment's on-disk home: {root}/{run_id}_{timestamp}. The timestamp
// keeps sweep directories unique; everything written inside is free of it so
// identical re-runs produce identical files.
struct RunDir {
  std::string path;
  std::string run_id;
};

// Creates the directory (and root if needed). Collisions get a -N suffix.
RunDir make_run_dir(const std::string& root, const std::string& run_id);

// metrics.csv schema: run_id,seed,epoch,split,metric,value. Deterministic
// double formatting; row order is the record's order.
void write_metrics_csv(const std::string& path, const std::string& run_id, uint64_t seed,
                       const std::vector<train::MetricRow>& rows);
std::vector<train::MetricRow> read_metrics_csv(const std::string& path, std::string* run_id_out,
                                               uint64_t* seed_out);

std::string utc_timestamp();

}  // namespace adimp::cli
