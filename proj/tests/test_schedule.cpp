// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "adimp/train/schedule.hpp"

using adimp::train::Schedule;

// Reference values were computed independently in double precision.
TEST_CASE("reversal ramp pinned values") {
  CHECK(std::abs(Schedule::ramp(0.0) - 0.0) <= 1e-12);
  CHECK(std::abs(Schedule::ramp(0.25) - 0.8482836399575131) <= 1e-12);
  CHECK(std::abs(Schedule::ramp(0.5) - 0.9866142981514305) <= 1e-12);
  CHECK(std::abs(Schedule::ramp(1.0) - 0.9999092042625952) <= 1e-12);
}

TEST_CASE("learning rate decay pinned values") {
  CHECK(std::abs(Schedule::lr(0.01, 0.0, 10.0) - 0.01) <= 1e-12);
  CHECK(std::abs(Schedule::lr(0.01, 0.25, 10.0) - 0.003907949713906801) <= 1e-12);
  CHECK(std::abs(Schedule::lr(0.01, 0.5, 10.0) - 0.0026084743001221454) <= 1e-12);
  CHECK(std::abs(Schedule::lr(0.01, 1.0, 10.0) - 0.0016556002607617019) <= 1e-12);
}

TEST_CASE("fast decay pinned values") {
  CHECK(std::abs(Schedule::lr(0.01, 0.0, 30.0) - 0.01) <= 1e-12);
  CHECK(std::abs(Schedule::lr(0.01, 0.25, 30.0) - 0.002008795864910758) <= 1e-12);
  CHECK(std::abs(Schedule::lr(0.01, 0.5, 30.0) - 0.00125) <= 1e-12);
  CHECK(std::abs(Schedule::lr(0.01, 1.0, 30.0) - 0.0007611648586356667) <= 1e-12);
}

TEST_CASE("ramp is monotone from 0 toward 1") {
  double prev = -1.0;
  for (int i = 0; i <= 100; ++i) {
    double v = Schedule::ramp(i / 100.0);
    CHECK(v > prev);
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    prev = v;
  }
}
