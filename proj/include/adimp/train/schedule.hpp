// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

namespace adimp::train {

// Annealing schedules driven by training progress p in [0, 1].
struct Schedule {
  // Ramp used both for the gradient-reversal scale and for the adaptation
  // loss weights: 2 / (1 + exp(-10 p)) - 1. Zero at p = 0, saturates to 1.
  static double ramp(double p) { return 2.0 / (1.0 + std::exp(-10.0 * p)) - 1.0; }

  // Decaying learning rate: lr0 / (1 + decay * p)^0.75. decay = 10 is the
  // default; 30 is the fast variant applied to selected heads.
  static double lr(double lr0, double p, double decay) {
    return lr0 / std::pow(1.0 + decay * p, 0.75);
  }
};

}  // namespace adimp::train
