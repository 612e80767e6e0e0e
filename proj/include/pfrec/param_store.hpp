// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pfrec/tensor.hpp"

namespace pfrec {

enum class UpdateRule { adam, rmsprop };

/// Moment buffers kept per slot so that optimizer state survives across calls.
template <typename T>
struct OptimizerState {
  UpdateRule rule = UpdateRule::adam;
  Tensor<T> first;   // Adam m
  Tensor<T> second;  // Adam v / RMSprop square average
  std::uint64_t steps = 0;
};

template <typename T>
struct ParamSlot {
  Tensor<T> value;
  bool trainable = true;
  OptimizerState<T> state;
};

template <typename T>
using GradMap = std::map<std::string, Tensor<T>>;

/// Named parameter slots. Names are unique and enumerate lexicographically;
/// `trainable` partitions the store into the parts an optimizer may touch.
template <typename T>
class ParamStore {
 public:
  void add(const std::string& name, Tensor<T> value, bool trainable = true);
  /// Inserts or overwrites the value; keeps the existing trainable flag.
  void put(const std::string& name, Tensor<T> value, bool trainable = true);

  bool contains(const std::string& name) const {
    return slots_.count(name) != 0;
  }
  ParamSlot<T>& slot(const std::string& name);
  const ParamSlot<T>& slot(const std::string& name) const;
  Tensor<T>& value(const std::string& name) { return slot(name).value; }
  const Tensor<T>& value(const std::string& name) const {
    return slot(name).value;
  }

  void set_trainable(const std::string& name, bool trainable) {
    slot(name).trainable = trainable;
  }
  /// Applies the flag to every slot whose name starts with `prefix`.
  void set_trainable_prefix(std::string_view prefix, bool trainable);
  void set_all_trainable(bool trainable) { set_trainable_prefix("", trainable); }

  std::vector<std::string> names(std::string_view prefix = "") const;
  std::size_t parameter_count(std::string_view prefix = "") const;
  std::size_t trainable_count() const;
  void erase_prefix(std::string_view prefix);
  /// Copies every slot under `prefix` from `other` (values only).
  void merge_from(const ParamStore& other, std::string_view prefix = "");
  std::size_t size() const { return slots_.size(); }

  const std::map<std::string, ParamSlot<T>>& slots() const { return slots_; }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, s] : slots_) {
      out.add(name, s.value.template cast<U>(), s.trainable);
    }
    return out;
  }

 private:
  std::map<std::string, ParamSlot<T>> slots_;
};

/// True iff every slot under `prefix` has identical names, shapes and bits.
template <typename T>
bool bitwise_equal(const ParamStore<T>& a, const ParamStore<T>& b,
                   std::string_view prefix = "");

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b);

struct OptimizerConfig {
  UpdateRule rule = UpdateRule::adam;
  double lr = 1e-4;
  double l2 = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double rms_decay = 0.99;
  double eps = 1e-8;
};

/// One update of every slot named in `grads`. Gradients for unknown or frozen
/// slots are rejected. The L2 term adds l2 * theta to each gradient before the
/// update rule runs. Switching rules on a slot resets its moment buffers.
template <typename T>
void optimizer_step(ParamStore<T>& store, const GradMap<T>& grads,
                    const OptimizerConfig& config);

}  // namespace pfrec
