// SPDX-License-Identifier: Apache-2.0
#include "msvq/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "msvq/rng.hpp"

namespace msvq {

namespace {

double evaluate(const LossBuilder& build) {
  Tape<double> tape(false);
  return build(tape).value()[0];
}

}  // namespace

double grad_check(const LossBuilder& build, const std::vector<Parameter<double>*>& params,
                  const GradCheckOptions& opts) {
  if (opts.step < 1e-6 || opts.step > 1e-3) {
    throw ParameterError("grad_check: step must lie in [1e-6, 1e-3]");
  }
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    Var<double> loss = build(tape);
    tape.backward(loss);
  }

  SeededRng rng(opts.seed, stream_id("grad_check"));
  double worst = 0.0;
  for (auto* p : params) {
    const std::size_t n = p->value.size();
    std::vector<std::size_t> coords(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    if (opts.coords_per_param && opts.coords_per_param < n) {
      for (std::size_t i = 0; i < opts.coords_per_param; ++i) {
        std::swap(coords[i], coords[i + rng.below(n - i)]);
      }
      coords.resize(opts.coords_per_param);
    }
    for (std::size_t i : coords) {
      const double saved = p->value[i];
      p->value[i] = saved + opts.step;
      const double up = evaluate(build);
      p->value[i] = saved - opts.step;
      const double down = evaluate(build);
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double analytic = p->grad[i];
      const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace msvq
