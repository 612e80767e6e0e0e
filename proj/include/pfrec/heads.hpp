// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "pfrec/graph.hpp"

namespace pfrec {

/// Attribute classifier d -> d -> d/2 -> classes with ReLU between layers.
/// Discriminators and attackers share this definition. Slots live under
/// `prefix` as w1, b1, w2, b2, w3, b3.
template <typename T>
void init_classifier_head(ParamStore<T>& store, const std::string& prefix,
                          std::size_t dim, std::size_t classes, std::uint64_t seed);

template <typename T>
Var classifier_logits(Graph<T>& g, const ParamStore<T>& store,
                      const std::string& prefix, Var x);

std::size_t classifier_parameter_count(std::size_t dim, std::size_t classes);

/// Two-layer filter d -> d (ReLU) -> d applied to user representations.
template <typename T>
void init_filter(ParamStore<T>& store, const std::string& prefix, std::size_t dim,
                 std::uint64_t seed);

template <typename T>
Var apply_filter(Graph<T>& g, const ParamStore<T>& store, const std::string& prefix,
                 Var x);

/// Xavier-uniform [fan_in, fan_out] matrix.
template <typename T>
Tensor<T> xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace pfrec
