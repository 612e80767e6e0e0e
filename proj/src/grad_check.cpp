// SPDX-License-Identifier: Apache-2.0
#include "pfrec/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace pfrec {

namespace {

double evaluate(const LossBuilder& build, const ParamStore<double>& store,
                const GradCheckMode& mode) {
  Graph<double> g(mode.training, mode.dropout_seed);
  const Var loss = build(g, store);
  return g.value(loss).item();
}

}  // namespace

double grad_check(const LossBuilder& build, ParamStore<double>& store,
                  double step, const GradCheckMode& mode) {
  if (!(step >= 1e-6 && step <= 1e-3)) {
    throw UsageError("grad_check: step must lie in [1e-6, 1e-3]");
  }
  GradMap<double> analytic;
  {
    Graph<double> g(mode.training, mode.dropout_seed);
    const Var loss = build(g, store);
    analytic = g.backward(loss);
  }
  double worst = 0.0;
  for (const auto& name : store.names()) {
    auto& slot = store.slot(name);
    if (!slot.trainable) continue;
    const auto it = analytic.find(name);
    for (std::size_t i = 0; i < slot.value.size(); ++i) {
      const double saved = slot.value[i];
      slot.value[i] = saved + step;
      const double up = evaluate(build, store, mode);
      slot.value[i] = saved - step;
      const double down = evaluate(build, store, mode);
      slot.value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = it == analytic.end() ? 0.0 : it->second[i];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        throw NumericError("grad_check: non-finite derivative for '" + name + "'");
      }
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

}  // namespace pfrec
