// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>

#include "adimp/data/dataset.hpp"
#include "adimp/data/synthetic.hpp"
#include "adimp/nets/arch.hpp"
#include "adimp/selftrain/refine.hpp"
#include "adimp/train/config.hpp"
#include "adimp/util/kvconfig.hpp"

namespace adimp::cli {

// A fully resolved experiment: validated config, loaded and masked data,
// architecture and phase configurations. One of these is all a run needs.
struct Experiment {
  util::KVConfig cfg;  // defaults filled, auto keys resolved to concrete values
  std::string dataset;
  std::string run_id;  // {dataset}_{variant}_{backend}_{seed}; no timestamp
  nets::ArchSpec arch;
  train::TrainConfig tcfg;
  selftrain::RefineConfig rcfg;
  data::MaskedDataset train_source, train_target, eval_source, eval_target;
  // Present for the synthetic dataset; carries the generating oracle.
  std::shared_ptr<data::SyntheticData> synth;
};

// Typed key set for experiment configs.
util::KVSchema experiment_schema();

// Validates, fills defaults, and replaces every "auto"/sentinel value with
// its resolved concrete value. Idempotent.
void resolve_config(util::KVConfig& cfg);

// Resolves the config and loads datasets. data_dir locates the digit caches
// and relative tabular paths.
Experiment load_experiment(util::KVConfig cfg, const std::string& data_dir);

}  // namespace adimp::cli
