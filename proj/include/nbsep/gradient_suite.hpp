// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Finite-difference checks of every differentiable layer and of the full
// training loss on a micro configuration. Shared by `nbsep gradcheck` and the
// acceptance tests.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nbsep/gradcheck.hpp"

namespace nbsep {

inline constexpr double kGradSuiteTolerance = 1e-4;

struct GradSuiteEntry {
  std::string name;
  std::uint64_t seed = 0;
  GradCheckResult result;
};

/// Runs each check once per seed in [first_seed, first_seed + seeds).
std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t first_seed = 1,
                                               std::size_t seeds = 5);

}  // namespace nbsep
