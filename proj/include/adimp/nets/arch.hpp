// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace adimp::nets {

// Structural description of a component bundle. Everything needed to rebuild
// the networks is here; checkpoints embed it so they load without the
// original config.
struct ArchSpec {
  std::string family;  // "conv_digits" or "mlp_tabular"

  // conv_digits: inputs are zero-embedded full frames
  int64_t in_channels = 1;
  int64_t image_side = 32;

  // mlp_tabular: block widths
  int64_t d1 = 0, d2 = 0;

  int num_classes = 10;
  bool classifier_on_pair = true;   // false: classifier reads only the first block latent
  bool strong_domain_disc = false;  // wider/deeper domain discriminator
  bool deep_imputer = false;        // extra hidden layer in the imputation head
  double dropout = 0.5;
  int64_t mlp_hidden = 128;

  int64_t latent() const {
    if (family == "conv_digits") {
      int64_t cells = (image_side / 8) * (image_side / 8);
      return 128 * cells;
    }
    if (family == "mlp_tabular") return mlp_hidden;
    throw std::invalid_argument("ArchSpec: unknown family '" + family + "'");
  }
  int64_t classifier_in() const { return classifier_on_pair ? 2 * latent() : latent(); }
  int64_t domain_disc_in() const { return classifier_in(); }
};

}  // namespace adimp::nets
