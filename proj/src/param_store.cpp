// SPDX-License-Identifier: Apache-2.0
#include "pfrec/param_store.hpp"

#include <cmath>
#include <cstring>

namespace pfrec {

template <typename T>
void ParamStore<T>::add(const std::string& name, Tensor<T> value,
                        bool trainable) {
  if (slots_.count(name)) {
    throw UsageError("param store: duplicate slot '" + name + "'");
  }
  put(name, std::move(value), trainable);
}

template <typename T>
void ParamStore<T>::put(const std::string& name, Tensor<T> value,
                        bool trainable) {
  auto it = slots_.find(name);
  if (it == slots_.end()) {
    ParamSlot<T> s;
    s.value = std::move(value);
    s.trainable = trainable;
    slots_.emplace(name, std::move(s));
  } else {
    it->second.value = std::move(value);
    it->second.state = {};
  }
}

template <typename T>
ParamSlot<T>& ParamStore<T>::slot(const std::string& name) {
  auto it = slots_.find(name);
  if (it == slots_.end()) {
    throw UsageError("param store: unknown slot '" + name + "'");
  }
  return it->second;
}

template <typename T>
const ParamSlot<T>& ParamStore<T>::slot(const std::string& name) const {
  auto it = slots_.find(name);
  if (it == slots_.end()) {
    throw UsageError("param store: unknown slot '" + name + "'");
  }
  return it->second;
}

template <typename T>
void ParamStore<T>::set_trainable_prefix(std::string_view prefix,
                                         bool trainable) {
  for (auto& [name, s] : slots_) {
    if (std::string_view(name).starts_with(prefix)) s.trainable = trainable;
  }
}

template <typename T>
std::vector<std::string> ParamStore<T>::names(std::string_view prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, s] : slots_) {
    if (std::string_view(name).starts_with(prefix)) out.push_back(name);
  }
  return out;
}

template <typename T>
std::size_t ParamStore<T>::parameter_count(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& [name, s] : slots_) {
    if (std::string_view(name).starts_with(prefix)) n += s.value.size();
  }
  return n;
}

template <typename T>
std::size_t ParamStore<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [name, s] : slots_) {
    if (s.trainable) n += s.value.size();
  }
  return n;
}

template <typename T>
void ParamStore<T>::erase_prefix(std::string_view prefix) {
  for (auto it = slots_.begin(); it != slots_.end();) {
    if (std::string_view(it->first).starts_with(prefix)) {
      it = slots_.erase(it);
    } else {
      ++it;
    }
  }
}

template <typename T>
void ParamStore<T>::merge_from(const ParamStore& other,
                               std::string_view prefix) {
  for (const auto& [name, s] : other.slots_) {
    if (std::string_view(name).starts_with(prefix)) {
      put(name, s.value, s.trainable);
    }
  }
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

template <typename T>
bool bitwise_equal(const ParamStore<T>& a, const ParamStore<T>& b,
                   std::string_view prefix) {
  const auto na = a.names(prefix);
  if (na != b.names(prefix)) return false;
  for (const auto& name : na) {
    if (!bitwise_equal(a.value(name), b.value(name))) return false;
  }
  return true;
}

template <typename T>
void optimizer_step(ParamStore<T>& store, const GradMap<T>& grads,
                    const OptimizerConfig& config) {
  // Validate everything before touching any slot.
  for (const auto& [name, g] : grads) {
    if (!store.contains(name)) {
      throw UsageError("optimizer: gradient for unknown slot '" + name + "'");
    }
    const auto& s = store.slot(name);
    if (!s.trainable) {
      throw UsageError("optimizer: gradient for frozen slot '" + name + "'");
    }
    if (g.shape() != s.value.shape()) {
      throw ShapeError("optimizer: gradient shape " + shape_str(g.shape()) +
                       " does not match slot '" + name + "' " +
                       shape_str(s.value.shape()));
    }
  }
  const T lr = static_cast<T>(config.lr);
  const T l2 = static_cast<T>(config.l2);
  const T eps = static_cast<T>(config.eps);
  for (const auto& [name, g] : grads) {
    auto& s = store.slot(name);
    auto& st = s.state;
    const std::size_t n = s.value.size();
    if (st.steps == 0 || st.rule != config.rule || st.second.size() != n) {
      st = OptimizerState<T>{};
      st.rule = config.rule;
      st.first = Tensor<T>(s.value.shape());
      st.second = Tensor<T>(s.value.shape());
    }
    ++st.steps;
    T* theta = s.value.data();
    const T* grad = g.data();
    T* m = st.first.data();
    T* v = st.second.data();
    if (config.rule == UpdateRule::adam) {
      const T b1 = static_cast<T>(config.beta1);
      const T b2 = static_cast<T>(config.beta2);
      const T c1 = static_cast<T>(
          1.0 - std::pow(config.beta1, static_cast<double>(st.steps)));
      const T c2 = static_cast<T>(
          1.0 - std::pow(config.beta2, static_cast<double>(st.steps)));
      for (std::size_t i = 0; i < n; ++i) {
        const T gi = grad[i] + l2 * theta[i];
        m[i] = b1 * m[i] + (T(1) - b1) * gi;
        v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
        const T mh = m[i] / c1;
        const T vh = v[i] / c2;
        theta[i] -= lr * mh / (std::sqrt(vh) + eps);
      }
    } else {
      const T a = static_cast<T>(config.rms_decay);
      for (std::size_t i = 0; i < n; ++i) {
        const T gi = grad[i] + l2 * theta[i];
        v[i] = a * v[i] + (T(1) - a) * gi * gi;
        theta[i] -= lr * gi / (std::sqrt(v[i]) + eps);
      }
    }
    if (!s.value.all_finite()) {
      throw NumericError("optimizer: non-finite value in slot '" + name + "'");
    }
  }
}

template class ParamStore<float>;
template class ParamStore<double>;
template bool bitwise_equal(const Tensor<float>&, const Tensor<float>&);
template bool bitwise_equal(const Tensor<double>&, const Tensor<double>&);
template bool bitwise_equal(const ParamStore<float>&, const ParamStore<float>&,
                            std::string_view);
template bool bitwise_equal(const ParamStore<double>&,
                            const ParamStore<double>&, std::string_view);
template void optimizer_step(ParamStore<float>&, const GradMap<float>&,
                             const OptimizerConfig&);
template void optimizer_step(ParamStore<double>&, const GradMap<double>&,
                             const OptimizerConfig&);

}  // namespace pfrec
