// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "pfrec/graph.hpp"

namespace pfrec {

/// Builds a scalar loss from the current values in the store.
using LossBuilder =
    std::function<Var(Graph<double>& graph, const ParamStore<double>& store)>;

/// Graph flags used for every evaluation; a fixed dropout seed makes the
/// dropout mask identical across the perturbed evaluations.
struct GradCheckMode {
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

/// Compares reverse-mode gradients against central differences for every
/// trainable coordinate of `store`:
///
///   max |analytic - numeric| / max(1, |numeric|)
///
/// The loss is rebuilt twice per coordinate. Runs in 64-bit
/// only; `step` must lie in [1e-6, 1e-3]. The store is restored on return.
double grad_check(const LossBuilder& build, ParamStore<double>& store,
                  double step = 1e-5, const GradCheckMode& mode = {});

}  // namespace pfrec
