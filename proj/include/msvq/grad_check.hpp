// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "msvq/tape.hpp"

namespace msvq {

/// Builds a scalar loss on the given tape. Parameters must enter the graph via
/// tape.param() so that both the analytic and numeric passes see them.
using LossBuilder = std::function<Var<double>(Tape<double>&)>;

struct GradCheckOptions {
  double step = 1e-4;
  /// Coordinates probed per parameter; 0 probes every coordinate.
  std::size_t coords_per_param = 0;
  std::uint64_t seed = 0;
};

/// Max over probed coordinates of |analytic − central difference| /
/// max(1, |analytic|, |numeric|). Double precision only; step ∈ [1e-6, 1e-3].
double grad_check(const LossBuilder& build, const std::vector<Parameter<double>*>& params,
                  const GradCheckOptions& opts = {});

}  // namespace msvq
