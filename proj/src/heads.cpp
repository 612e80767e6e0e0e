// SPDX-License-Identifier: Apache-2.0
#include "pfrec/heads.hpp"

#include <cmath>

namespace pfrec {

template <typename T>
Tensor<T> xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<T> w({fan_in, fan_out});
  for (auto& v : w.storage()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * a);
  return w;
}

template <typename T>
void init_classifier_head(ParamStore<T>& store, const std::string& prefix,
                          std::size_t dim, std::size_t classes, std::uint64_t seed) {
  if (dim < 2 || classes < 2) {
    throw UsageError("classifier head needs dim >= 2 and >= 2 classes");
  }
  Rng rng(seed);
  const std::size_t h = dim / 2;
  store.add(prefix + "w1", xavier<T>(dim, dim, rng));
  store.add(prefix + "b1", Tensor<T>({dim}));
  store.add(prefix + "w2", xavier<T>(dim, h, rng));
  store.add(prefix + "b2", Tensor<T>({h}));
  store.add(prefix + "w3", xavier<T>(h, classes, rng));
  store.add(prefix + "b3", Tensor<T>({classes}));
}

template <typename T>
Var classifier_logits(Graph<T>& g, const ParamStore<T>& store,
                      const std::string& prefix, Var x) {
  auto P = [&](const char* n) { return g.param(store, prefix + n); };
  Var h = g.relu(g.add(g.matmul(x, P("w1")), P("b1")));
  h = g.relu(g.add(g.matmul(h, P("w2")), P("b2")));
  return g.add(g.matmul(h, P("w3")), P("b3"));
}

std::size_t classifier_parameter_count(std::size_t dim, std::size_t classes) {
  const std::size_t h = dim / 2;
  return dim * dim + dim + dim * h + h + h * classes + classes;
}

template <typename T>
void init_filter(ParamStore<T>& store, const std::string& prefix, std::size_t dim,
                 std::uint64_t seed) {
  Rng rng(seed);
  store.add(prefix + "w1", xavier<T>(dim, dim, rng));
  store.add(prefix + "b1", Tensor<T>({dim}));
  store.add(prefix + "w2", xavier<T>(dim, dim, rng));
  store.add(prefix + "b2", Tensor<T>({dim}));
}

template <typename T>
Var apply_filter(Graph<T>& g, const ParamStore<T>& store, const std::string& prefix,
                 Var x) {
  auto P = [&](const char* n) { return g.param(store, prefix + n); };
  const Var h = g.relu(g.add(g.matmul(x, P("w1")), P("b1")));
  return g.add(g.matmul(h, P("w2")), P("b2"));
}

#define PFREC_INSTANTIATE(T)                                                        \
  template Tensor<T> xavier<T>(std::size_t, std::size_t, Rng&);                     \
  template void init_classifier_head(ParamStore<T>&, const std::string&,            \
                                     std::size_t, std::size_t, std::uint64_t);      \
  template Var classifier_logits(Graph<T>&, const ParamStore<T>&, const std::string&, \
                                 Var);                                              \
  template void init_filter(ParamStore<T>&, const std::string&, std::size_t,        \
                            std::uint64_t);                                         \
  template Var apply_filter(Graph<T>&, const ParamStore<T>&, const std::string&, Var);
PFREC_INSTANTIATE(float)
PFREC_INSTANTIATE(double)
#undef PFREC_INSTANTIATE

}  // namespace pfrec
