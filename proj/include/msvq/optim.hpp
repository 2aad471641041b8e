// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "msvq/tape.hpp"

namespace msvq {

/// Heavy-ball SGD with coupled L2 decay:
///   v ← momentum·v + (grad + weight_decay·θ);  θ ← θ − lr·v.
/// velocity is resized on first use.
template <class T>
void sgd_step(const std::vector<Parameter<T>*>& params, std::vector<Tensor<T>>& velocity, double lr,
              double momentum, double weight_decay);

/// Linear warmup 0 → base over warmup_steps, then half-cosine base → 0 at total_steps.
struct LrSchedule {
  double base_lr = 0.06;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;

  double at(std::size_t step) const;
};

}  // namespace msvq
