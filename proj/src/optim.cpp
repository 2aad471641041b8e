// SPDX-License-Identifier: Apache-2.0
#include "msvq/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace msvq {

template <class T>
void sgd_step(const std::vector<Parameter<T>*>& params, std::vector<Tensor<T>>& velocity, double lr,
              double momentum, double weight_decay) {
  if (!(lr >= 0.0)) throw ParameterError("learning rate must be non-negative");
  if (velocity.empty()) {
    for (const auto* p : params) velocity.emplace_back(p->value.shape());
  }
  if (velocity.size() != params.size()) throw ShapeError("sgd_step: velocity/parameter count mismatch");
  const T mu = static_cast<T>(momentum), wd = static_cast<T>(weight_decay), eta = static_cast<T>(lr);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<T>& p = *params[k];
    if (velocity[k].shape() != p.value.shape() || p.grad.shape() != p.value.shape()) {
      throw ShapeError("sgd_step: " + p.name + " shape " + shape_str(p.value.shape()) +
                       " vs velocity " + shape_str(velocity[k].shape()));
    }
    auto v = velocity[k].data();
    auto th = p.value.data();
    auto g = p.grad.data();
    for (std::size_t i = 0; i < th.size(); ++i) {
      v[i] = mu * v[i] + (g[i] + wd * th[i]);
      th[i] -= eta * v[i];
    }
  }
}

double LrSchedule::at(std::size_t step) const {
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double span = static_cast<double>(std::max<std::size_t>(1, total_steps - std::min(total_steps, warmup_steps)));
  const double progress = std::min(1.0, static_cast<double>(step - warmup_steps) / span);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template void sgd_step(const std::vector<Parameter<float>*>&, std::vector<Tensor<float>>&, double, double,
                       double);
template void sgd_step(const std::vector<Parameter<double>*>&, std::vector<Tensor<double>>&, double, double,
                       double);

}  // namespace msvq
