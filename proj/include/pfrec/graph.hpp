// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pfrec/param_store.hpp"
#include "pfrec/rng.hpp"
#include "pfrec/tensor.hpp"

namespace pfrec {

/// Handle to a node of a Graph.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode autodiff tape.
///
/// The graph is define-by-run: every op validates shapes, computes its output
/// immediately and appends one node, so node order is a topological order and
/// each output is computed exactly once. `backward` walks the nodes in reverse
/// id order; gradient contributions therefore accumulate in a fixed order.
///
/// Leaves come in three flavours: constants (never differentiated), free
/// leaves (`leaf`, gradient readable via `grad`), and parameters bound to a
/// ParamStore slot, which require a gradient iff the slot is trainable at
/// the time the node is created. Nodes whose inputs need no gradient skip
/// their backward work entirely.
///
/// Every op output is checked for NaN/Inf; a non-finite value raises
/// NumericError naming the node.
template <typename T>
class Graph {
 public:
  explicit Graph(bool training = false, std::uint64_t dropout_seed = 0)
      : training_(training), rng_(dropout_seed) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool training() const { return training_; }

  // Leaves -------------------------------------------------------------
  Var constant(Tensor<T> value, std::string label = "constant");
  Var leaf(Tensor<T> value, bool requires_grad, std::string label = "leaf");
  /// Binds a store slot. Repeated calls for the same slot return one node.
  Var param(const ParamStore<T>& store, const std::string& name);
  /// Constant copy of a node's current value (gradient stops here).
  Var detach(Var x);

  // Linear algebra -------------------------------------------------------
  /// x [..., K] times w [K, M] -> [..., M]
  Var matmul(Var x, Var w);
  /// a [..., N, K] times b [..., K, M] with identical leading extents.
  Var bmm(Var a, Var b);
  /// Reorders axes; out axis i is input axis perm[i].
  Var permute(Var x, std::vector<std::size_t> perm);
  Var reshape(Var x, Shape shape);

  // Elementwise ------------------------------------------------------------
  /// `b` either matches `a` or matches a suffix of a's shape (broadcast over
  /// leading axes).
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, T factor);
  /// Multiplies every last-axis row of x [..., D] by the matching entry of
  /// `weights` (shape [...]); weights are constants.
  Var scale_rows(Var x, const Tensor<T>& weights);
  Var relu(Var x);
  Var gelu(Var x);
  Var sigmoid(Var x);
  /// log(sigmoid(x)), stable for large |x|.
  Var log_sigmoid(Var x);
  Var log(Var x);
  /// Inverted dropout; identity outside training mode or for rate 0.
  Var dropout(Var x, double rate);

  // Normalization ------------------------------------------------------------
  /// Softmax over the last axis after adding `mask`. The mask has shape
  /// [G, R, C] (or [R, C]) where x is [..., R, C] and the number of leading
  /// blocks of x is a multiple of G; consecutive blocks share a mask.
  Var softmax(Var x, const Tensor<T>* mask = nullptr);
  Var log_softmax(Var x);
  /// Normalizes the last axis (epsilon added to the variance), then applies
  /// gamma/beta. Rows with zero variance map to beta.
  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-8));

  // Indexing ----------------------------------------------------------------
  /// Rows of table [V, D] for each id; output shape index_shape + [D].
  Var gather(Var table, std::span<const int> ids, Shape index_shape);
  /// x [N, C] -> [N] picking column labels[n].
  Var pick(Var x, std::span<const int> labels);
  Var concat(std::span<const Var> parts, std::size_t axis);
  Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);

  // Reductions ----------------------------------------------------------------
  Var sum(Var x);
  Var mean(Var x);
  /// Sums the last axis: [..., D] -> [...]
  Var sum_last(Var x);

  // Differentiation -------------------------------------------------------
  /// Back-propagates from a one-element loss seeded with `seed`. Returns the
  /// gradient of every trainable parameter node, keyed by slot name
  /// (zero-filled if the loss does not depend on it).
  GradMap<T> backward(Var loss, T seed = T(1));

  const Tensor<T>& value(Var v) const { return node(v).value; }
  /// Gradient buffer of a node after backward (empty if none flowed).
  const Tensor<T>& grad(Var v) const { return node(v).grad; }
  const Shape& shape(Var v) const { return node(v).value.shape(); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t node_count() const { return nodes_.size(); }
  const std::string& op_name(Var v) const { return node(v).op; }
  std::string describe(Var v) const { return describe(v.id); }

 private:
  struct Node {
    std::string op;
    std::string slot;  // parameter slot name, empty otherwise
    std::vector<int> inputs;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::function<void(Graph&, int)> backward;
  };

  const Node& node(Var v) const;
  std::string describe(int id) const;
  Var push(std::string op, std::vector<int> inputs, Tensor<T> value,
           std::function<void(Graph&, int)> backward);
  /// Gradient buffer of node `id`, zero-allocated on first use.
  Tensor<T>& grad_buffer(int id);
  bool needs(int id) const { return nodes_[id].requires_grad; }
  [[noreturn]] void shape_error(const std::string& op, int a, int b,
                                const std::string& detail) const;
  Var binary(const std::string& op, Var a, Var b);

  bool training_;
  Rng rng_;
  std::vector<Node> nodes_;
  std::map<std::pair<const void*, std::string>, int> param_nodes_;
};

}  // namespace pfrec
