// SPDX-License-Identifier: Apache-2.0
#include "pfrec/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kernels.hpp"

namespace pfrec {

namespace {

bool is_suffix(const Shape& whole, const Shape& part) {
  if (part.size() > whole.size()) return false;
  return std::equal(part.rbegin(), part.rend(), whole.rbegin());
}

Shape without_last(const Shape& s) { return Shape(s.begin(), s.end() - 1); }

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

// Visits every element of a permuted view: f(out_index, in_index).
template <typename F>
void for_each_permuted(const Shape& in_shape,
                       const std::vector<std::size_t>& perm, F&& f) {
  const std::size_t r = in_shape.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[perm[i]];
    stride[i] = in_stride[perm[i]];
  }
  const std::size_t total = shape_size(in_shape);
  if (total == 0) return;
  std::vector<std::size_t> idx(r, 0);
  std::size_t in = 0;
  for (std::size_t out = 0; out < total; ++out) {
    f(out, in);
    for (std::size_t a = r; a-- > 0;) {
      if (++idx[a] < out_shape[a]) {
        in += stride[a];
        break;
      }
      in -= stride[a] * (out_shape[a] - 1);
      idx[a] = 0;
    }
  }
}

template <typename T>
T gelu_value(T x) {
  const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  const T k = static_cast<T>(0.044715);
  return T(0.5) * x * (T(1) + std::tanh(c * (x + k * x * x * x)));
}

template <typename T>
T gelu_grad(T x) {
  const T c = static_cast<T>(0.7978845608028654);
  const T k = static_cast<T>(0.044715);
  const T t = std::tanh(c * (x + k * x * x * x));
  return T(0.5) * (T(1) + t) +
         T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3) * k * x * x);
}

template <typename T>
T sigmoid_value(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw UsageError("graph: invalid node handle " + std::to_string(v.id));
  }
  return nodes_[v.id];
}

template <typename T>
std::string Graph<T>::describe(int id) const {
  const Node& n = nodes_.at(id);
  std::string s = "#" + std::to_string(id) + " " + n.op;
  if (!n.slot.empty()) s += " '" + n.slot + "'";
  return s + " " + shape_str(n.value.shape());
}

template <typename T>
void Graph<T>::shape_error(const std::string& op, int a, int b,
                           const std::string& detail) const {
  std::string msg = op + ": shape mismatch between node " + describe(a);
  if (b >= 0) msg += " and node " + describe(b);
  if (!detail.empty()) msg += " (" + detail + ")";
  throw ShapeError(msg);
}

template <typename T>
Var Graph<T>::push(std::string op, std::vector<int> inputs, Tensor<T> value,
                   std::function<void(Graph&, int)> backward) {
  if (!value.all_finite()) {
    std::string msg = "non-finite output at node #" +
                      std::to_string(nodes_.size()) + " " + op;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      msg += i ? ", " : " (inputs ";
      msg += describe(inputs[i]);
    }
    if (!inputs.empty()) msg += ")";
    throw NumericError(msg);
  }
  Node n;
  n.op = std::move(op);
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  for (int i : n.inputs) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Tensor<T>& Graph<T>::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) {
    n.grad = Tensor<T>(n.value.shape());
  }
  return n.grad;
}

// ---------------------------------------------------------------------------
// Leaves

template <typename T>
Var Graph<T>::constant(Tensor<T> value, std::string label) {
  return push(std::move(label), {}, std::move(value), nullptr);
}

template <typename T>
Var Graph<T>::leaf(Tensor<T> value, bool requires_grad, std::string label) {
  Var v = push(std::move(label), {}, std::move(value), nullptr);
  nodes_[v.id].requires_grad = requires_grad;
  return v;
}

template <typename T>
Var Graph<T>::param(const ParamStore<T>& store, const std::string& name) {
  const auto key = std::make_pair(static_cast<const void*>(&store), name);
  if (auto it = param_nodes_.find(key); it != param_nodes_.end()) {
    return Var{it->second};
  }
  const auto& s = store.slot(name);
  Var v = push("param", {}, s.value, nullptr);
  nodes_[v.id].slot = name;
  nodes_[v.id].requires_grad = s.trainable;
  param_nodes_.emplace(key, v.id);
  return v;
}

template <typename T>
Var Graph<T>::detach(Var x) {
  return constant(value(x), "detach");
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var Graph<T>::matmul(Var x, Var w) {
  const Shape& xs = shape(x);
  const Shape& ws = shape(w);
  if (ws.size() != 2 || xs.empty() || xs.back() != ws[0]) {
    shape_error("matmul", x.id, w.id, "expects [..., K] x [K, M]");
  }
  const std::size_t K = ws[0], M = ws[1], N = value(x).size() / K;
  Shape out_shape = xs;
  out_shape.back() = M;
  Tensor<T> out(out_shape);
  kernels::gemm_acc(value(x).data(), value(w).data(), out.data(), N, K, M);
  return push("matmul", {x.id, w.id}, std::move(out),
              [N, K, M](Graph& g, int self) {
                const int xi = g.nodes_[self].inputs[0];
                const int wi = g.nodes_[self].inputs[1];
                const Tensor<T>& dy = g.nodes_[self].grad;
                if (g.needs(xi)) {
                  std::vector<T> wt(K * M);
                  kernels::transpose(g.nodes_[wi].value.data(), wt.data(), K, M);
                  kernels::gemm_acc(dy.data(), wt.data(),
                                    g.grad_buffer(xi).data(), N, M, K);
                }
                if (g.needs(wi)) {
                  std::vector<T> xt(N * K);
                  kernels::transpose(g.nodes_[xi].value.data(), xt.data(), N, K);
                  kernels::gemm_acc(xt.data(), dy.data(),
                                    g.grad_buffer(wi).data(), K, N, M);
                }
              });
}

template <typename T>
Var Graph<T>::bmm(Var a, Var b) {
  const Shape& as = shape(a);
  const Shape& bs = shape(b);
  if (as.size() < 2 || as.size() != bs.size() ||
      !std::equal(as.begin(), as.end() - 2, bs.begin()) ||
      as[as.size() - 1] != bs[bs.size() - 2]) {
    shape_error("bmm", a.id, b.id, "expects [..., N, K] x [..., K, M]");
  }
  const std::size_t N = as[as.size() - 2], K = as.back(), M = bs.back();
  const std::size_t G = value(a).size() / (N * K);
  Shape out_shape = as;
  out_shape.back() = M;
  Tensor<T> out(out_shape);
  for (std::size_t g = 0; g < G; ++g) {
    kernels::gemm_acc(value(a).data() + g * N * K, value(b).data() + g * K * M,
                      out.data() + g * N * M, N, K, M);
  }
  return push("bmm", {a.id, b.id}, std::move(out),
              [G, N, K, M](Graph& gr, int self) {
                const int ai = gr.nodes_[self].inputs[0];
                const int bi = gr.nodes_[self].inputs[1];
                const T* dy = gr.nodes_[self].grad.data();
                if (gr.needs(ai)) {
                  T* da = gr.grad_buffer(ai).data();
                  const T* bv = gr.nodes_[bi].value.data();
                  std::vector<T> bt(K * M);
                  for (std::size_t g = 0; g < G; ++g) {
                    kernels::transpose(bv + g * K * M, bt.data(), K, M);
                    kernels::gemm_acc(dy + g * N * M, bt.data(), da + g * N * K,
                                      N, M, K);
                  }
                }
                if (gr.needs(bi)) {
                  T* db = gr.grad_buffer(bi).data();
                  const T* av = gr.nodes_[ai].value.data();
                  std::vector<T> at(N * K);
                  for (std::size_t g = 0; g < G; ++g) {
                    kernels::transpose(av + g * N * K, at.data(), N, K);
                    kernels::gemm_acc(at.data(), dy + g * N * M, db + g * K * M,
                                      K, N, M);
                  }
                }
              });
}

template <typename T>
Var Graph<T>::permute(Var x, std::vector<std::size_t> perm) {
  const Shape& xs = shape(x);
  std::vector<std::size_t> check = perm;
  std::sort(check.begin(), check.end());
  bool ok = check.size() == xs.size();
  for (std::size_t i = 0; ok && i < check.size(); ++i) ok = check[i] == i;
  if (!ok) shape_error("permute", x.id, -1, "invalid axis permutation");
  Shape out_shape(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out_shape[i] = xs[perm[i]];
  Tensor<T> out(out_shape);
  const T* src = value(x).data();
  T* dst = out.data();
  for_each_permuted(xs, perm, [&](std::size_t o, std::size_t i) { dst[o] = src[i]; });
  return push("permute", {x.id}, std::move(out),
              [perm, xs](Graph& g, int self) {
                const int xi = g.nodes_[self].inputs[0];
                const T* dy = g.nodes_[self].grad.data();
                T* dx = g.grad_buffer(xi).data();
                for_each_permuted(xs, perm,
                                  [&](std::size_t o, std::size_t i) { dx[i] += dy[o]; });
              });
}

template <typename T>
Var Graph<T>::reshape(Var x, Shape shape) {
  if (shape_size(shape) != value(x).size()) {
    shape_error("reshape", x.id, -1, "target " + shape_str(shape));
  }
  return push("reshape", {x.id}, value(x).reshaped(std::move(shape)),
              [](Graph& g, int self) {
                const int xi = g.nodes_[self].inputs[0];
                const T* dy = g.nodes_[self].grad.data();
                Tensor<T>& dx = g.grad_buffer(xi);
                for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
              });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var Graph<T>::binary(const std::string& op, Var a, Var b) {
  const Shape& as = shape(a);
  const Shape& bs = shape(b);
  if (!is_suffix(as, bs)) {
    shape_error(op, a.id, b.id, "second operand must match or be a suffix");
  }
  const std::size_t inner = value(b).size();
  const std::size_t outer = inner ? value(a).size() / inner : 0;
  const T* av = value(a).data();
  const T* bv = value(b).data();
  Tensor<T> out(as);
  T* o = out.data();
  const int kind = op == "add" ? 0 : op == "sub" ? 1 : 2;
  for (std::size_t r = 0; r < outer; ++r) {
    const T* ar = av + r * inner;
    T* orow = o + r * inner;
    if (kind == 0) {
      for (std::size_t j = 0; j < inner; ++j) orow[j] = ar[j] + bv[j];
    } else if (kind == 1) {
      for (std::size_t j = 0; j < inner; ++j) orow[j] = ar[j] - bv[j];
    } else {
      for (std::size_t j = 0; j < inner; ++j) orow[j] = ar[j] * bv[j];
    }
  }
  return push(op, {a.id, b.id}, std::move(out),
              [kind, inner, outer](Graph& g, int self) {
                const int ai = g.nodes_[self].inputs[0];
                const int bi = g.nodes_[self].inputs[1];
                const T* dy = g.nodes_[self].grad.data();
                if (g.needs(ai)) {
                  T* da = g.grad_buffer(ai).data();
                  const T* bv = g.nodes_[bi].value.data();
                  for (std::size_t r = 0; r < outer; ++r) {
                    const T* d = dy + r * inner;
                    T* dar = da + r * inner;
                    if (kind == 2) {
                      for (std::size_t j = 0; j < inner; ++j) dar[j] += d[j] * bv[j];
                    } else {
                      for (std::size_t j = 0; j < inner; ++j) dar[j] += d[j];
                    }
                  }
                }
                if (g.needs(bi)) {
                  T* db = g.grad_buffer(bi).data();
                  const T* av = g.nodes_[ai].value.data();
                  for (std::size_t r = 0; r < outer; ++r) {
                    const T* d = dy + r * inner;
                    if (kind == 0) {
                      for (std::size_t j = 0; j < inner; ++j) db[j] += d[j];
                    } else if (kind == 1) {
                      for (std::size_t j = 0; j < inner; ++j) db[j] -= d[j];
                    } else {
                      const T* ar = av + r * inner;
                      for (std::size_t j = 0; j < inner; ++j) db[j] += d[j] * ar[j];
                    }
                  }
                }
              });
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  return binary("add", a, b);
}
template <typename T>
Var Graph<T>::sub(Var a, Var b) {
  return binary("sub", a, b);
}
template <typename T>
Var Graph<T>::mul(Var a, Var b) {
  return binary("mul", a, b);
}

template <typename T>
Var Graph<T>::scale(Var x, T factor) {
  Tensor<T> out = value(x);
  for (auto& v : out.storage()) v *= factor;
  return push("scale", {x.id}, std::move(out), [factor](Graph& g, int self) {
    const int xi = g.nodes_[self].inputs[0];
    const T* dy = g.nodes_[self].grad.data();
    Tensor<T>& dx = g.grad_buffer(xi);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * dy[i];
  });
}

template <typename T>
Var Graph<T>::scale_rows(Var x, const Tensor<T>& weights) {
  const Shape& xs = shape(x);
  if (xs.empty() || weights.shape() != without_last(xs)) {
    throw ShapeError("scale_rows: weights " + shape_str(weights.shape()) +
                     " do not match rows of node " + describe(x.id));
  }
  const std::size_t D = xs.back(), R = weights.size();
  Tensor<T> out(xs);
  const T* xv = value(x).data();
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < D; ++j) out[r * D + j] = xv[r * D + j] * weights[r];
  }
  return push("scale_rows", {x.id}, std::move(out),
              [weights, D, R](Graph& g, int self) {
                const int xi = g.nodes_[self].inputs[0];
                const T* dy = g.nodes_[self].grad.data();
                T* dx = g.grad_buffer(xi).data();
                for (std::size_t r = 0; r < R; ++r) {
                  for (std::size_t j = 0; j < D; ++j) dx[r * D + j] += dy[r * D + j] * weights[r];
                }
              });
}

#define PFREC_UNARY(NAME, FWD, DERIV)                                       \
  template <typename T>                                                     \
  Var Graph<T>::NAME(Var x) {                                               \
    const Tensor<T>& in = value(x);                                         \
    Tensor<T> out(in.shape());                                              \
    for (std::size_t i = 0; i < in.size(); ++i) {                           \
      const T v = in[i];                                                    \
      out[i] = (FWD);                                                       \
    }                                                                       \
    return push(#NAME, {x.id}, std::move(out), [](Graph& g, int self) {     \
      const int xi = g.nodes_[self].inputs[0];                              \
      const T* dy = g.nodes_[self].grad.data();                             \
      const T* xs = g.nodes_[xi].value.data();                              \
      const T* ys = g.nodes_[self].value.data();                            \
      T* dx = g.grad_buffer(xi).data();                                     \
      const std::size_t n = g.nodes_[self].value.size();                    \
      for (std::size_t i = 0; i < n; ++i) {                                 \
        const T v = xs[i];                                                  \
        const T y = ys[i];                                                  \
        (void)v;                                                            \
        (void)y;                                                            \
        dx[i] += dy[i] * (DERIV);                                           \
      }                                                                     \
    });                                                                     \
  }

PFREC_UNARY(relu, v > T(0) ? v : T(0), v > T(0) ? T(1) : T(0))
PFREC_UNARY(gelu, gelu_value(v), gelu_grad(v))
PFREC_UNARY(sigmoid, sigmoid_value(v), y * (T(1) - y))
PFREC_UNARY(log_sigmoid,
            std::min(v, T(0)) - std::log1p(std::exp(-std::abs(v))),
            sigmoid_value(-v))
PFREC_UNARY(log, std::log(v), T(1) / v)

#undef PFREC_UNARY

template <typename T>
Var Graph<T>::dropout(Var x, double rate) {
  if (!training_ || rate <= 0.0) return x;
  if (rate >= 1.0) throw UsageError("dropout: rate must be < 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  const Tensor<T>& in = value(x);
  std::vector<T> mult(in.size());
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) {
    mult[i] = rng_.uniform() < rate ? T(0) : keep_scale;
    out[i] = in[i] * mult[i];
  }
  return push("dropout", {x.id}, std::move(out),
              [mult = std::move(mult)](Graph& g, int self) {
                const int xi = g.nodes_[self].inputs[0];
                const T* dy = g.nodes_[self].grad.data();
                T* dx = g.grad_buffer(xi).data();
                for (std::size_t i = 0; i < mult.size(); ++i) dx[i] += dy[i] * mult[i];
              });
}

// ---------------------------------------------------------------------------
// Normalization

template <typename T>
Var Graph<T>::softmax(Var x, const Tensor<T>* mask) {
  const Shape& xs = shape(x);
  if (xs.empty()) shape_error("softmax", x.id, -1, "rank 0 input");
  const std::size_t C = xs.back();
  const std::size_t rows = value(x).size() / C;
  std::size_t R = 1, G = 1, blocks = rows, per_group = rows;
  if (mask) {
    const Shape& ms = mask->shape();
    if (xs.size() < 2 || ms.size() < 2 || ms.size() > 3 ||
        ms[ms.size() - 1] != C || ms[ms.size() - 2] != xs[xs.size() - 2]) {
      throw ShapeError("softmax: mask " + shape_str(ms) +
                       " incompatible with node " + describe(x.id));
    }
    R = xs[xs.size() - 2];
    G = ms.size() == 3 ? ms[0] : 1;
    blocks = rows / R;
    if (blocks % G != 0) {
      throw ShapeError("softmax: mask groups " + std::to_string(G) +
                       " do not divide blocks of node " + describe(x.id));
    }
    per_group = blocks / G;
  }
  (void)per_group;
  Tensor<T> out(xs);
  const T* in = value(x).data();
  std::vector<T> row(C);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = in + r * C;
    const T* mr = nullptr;
    if (mask) {
      const std::size_t block = r / R;
      const std::size_t g = block / (blocks / G);
      mr = mask->data() + (g * R + r % R) * C;
    }
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < C; ++c) {
      row[c] = mr ? xr[c] + mr[c] : xr[c];
      mx = std::max(mx, row[c]);
    }
    T total = 0;
    for (std::size_t c = 0; c < C; ++c) {
      row[c] = std::exp(row[c] - mx);
      total += row[c];
    }
    T* orow = out.data() + r * C;
    for (std::size_t c = 0; c < C; ++c) orow[c] = row[c] / total;
  }
  return push("softmax", {x.id}, std::move(out), [C, rows](Graph& g, int self) {
    const int xi = g.nodes_[self].inputs[0];
    const T* dy = g.nodes_[self].grad.data();
    const T* y = g.nodes_[self].value.data();
    T* dx = g.grad_buffer(xi).data();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = y + r * C;
      const T* dr = dy + r * C;
      T dot = 0;
      for (std::size_t c = 0; c < C; ++c) dot += dr[c] * yr[c];
      T* xr = dx + r * C;
      for (std::size_t c = 0; c < C; ++c) xr[c] += yr[c] * (dr[c] - dot);
    }
  });
}

template <typename T>
Var Graph<T>::log_softmax(Var x) {
  const Shape& xs = shape(x);
  if (xs.empty()) shape_error("log_softmax", x.id, -1, "rank 0 input");
  const std::size_t C = xs.back();
  const std::size_t rows = value(x).size() / C;
  Tensor<T> out(xs);
  const T* in = value(x).data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = in + r * C;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, xr[c]);
    T total = 0;
    for (std::size_t c = 0; c < C; ++c) total += std::exp(xr[c] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = xr[c] - lse;
  }
  return push("log_softmax", {x.id}, std::move(out), [C, rows](Graph& g, int self) {
    const int xi = g.nodes_[self].inputs[0];
    const T* dy = g.nodes_[self].grad.data();
    const T* y = g.nodes_[self].value.data();
    T* dx = g.grad_buffer(xi).data();
    for (std::size_t r = 0; r < rows; ++r) {
      T total = 0;
      for (std::size_t c = 0; c < C; ++c) total += dy[r * C + c];
      for (std::size_t c = 0; c < C; ++c) {
        dx[r * C + c] += dy[r * C + c] - std::exp(y[r * C + c]) * total;
      }
    }
  });
}

template <typename T>
Var Graph<T>::layer_norm(Var x, Var gamma, Var beta, T eps) {
  const Shape& xs = shape(x);
  if (xs.empty()) shape_error("layer_norm", x.id, -1, "rank 0 input");
  const std::size_t D = xs.back();
  if (shape(gamma) != Shape{D}) shape_error("layer_norm", x.id, gamma.id, "gamma");
  if (shape(beta) != Shape{D}) shape_error("layer_norm", x.id, beta.id, "beta");
  const std::size_t rows = value(x).size() / D;
  Tensor<T> out(xs);
  std::vector<T> xhat(value(x).size());
  std::vector<T> rstd(rows);
  const T* in = value(x).data();
  const T* gv = value(gamma).data();
  const T* bv = value(beta).data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = in + r * D;
    T* hr = xhat.data() + r * D;
    bool constant_row = true;
    for (std::size_t j = 1; j < D && constant_row; ++j) constant_row = xr[j] == xr[0];
    T mean = 0;
    for (std::size_t j = 0; j < D; ++j) mean += xr[j];
    mean /= static_cast<T>(D);
    T var = 0;
    for (std::size_t j = 0; j < D; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(D);
    if (constant_row) var = 0;
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < D; ++j) {
      hr[j] = constant_row ? T(0) : (xr[j] - mean) * rstd[r];
      out[r * D + j] = hr[j] * gv[j] + bv[j];
    }
  }
  return push("layer_norm", {x.id, gamma.id, beta.id}, std::move(out),
              [D, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Graph& g,
                                                                       int self) {
                const auto& in = g.nodes_[self].inputs;
                const T* dy = g.nodes_[self].grad.data();
                const T* gv = g.nodes_[in[1]].value.data();
                if (g.needs(in[0])) {
                  T* dx = g.grad_buffer(in[0]).data();
                  std::vector<T> dh(D);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const T* hr = xhat.data() + r * D;
                    T m1 = 0, m2 = 0;
                    for (std::size_t j = 0; j < D; ++j) {
                      dh[j] = dy[r * D + j] * gv[j];
                      m1 += dh[j];
                      m2 += dh[j] * hr[j];
                    }
                    m1 /= static_cast<T>(D);
                    m2 /= static_cast<T>(D);
                    for (std::size_t j = 0; j < D; ++j) {
                      dx[r * D + j] += rstd[r] * (dh[j] - m1 - hr[j] * m2);
                    }
                  }
                }
                if (g.needs(in[1])) {
                  T* dg = g.grad_buffer(in[1]).data();
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < D; ++j) dg[j] += dy[r * D + j] * xhat[r * D + j];
                  }
                }
                if (g.needs(in[2])) {
                  T* db = g.grad_buffer(in[2]).data();
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < D; ++j) db[j] += dy[r * D + j];
                  }
                }
              });
}

// ---------------------------------------------------------------------------
// Indexing

template <typename T>
Var Graph<T>::gather(Var table, std::span<const int> ids, Shape index_shape) {
  const Shape& ts = shape(table);
  if (ts.size() != 2) shape_error("gather", table.id, -1, "table must be rank 2");
  if (shape_size(index_shape) != ids.size()) {
    throw ShapeError("gather: " + std::to_string(ids.size()) +
                     " ids do not fill index shape " + shape_str(index_shape));
  }
  const std::size_t V = ts[0], D = ts[1];
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= V) {
      throw UsageError("gather: id " + std::to_string(id) +
                       " out of range for node " + describe(table.id));
    }
  }
  Shape out_shape = std::move(index_shape);
  out_shape.push_back(D);
  Tensor<T> out(out_shape);
  const T* tv = value(table).data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(tv + static_cast<std::size_t>(ids[i]) * D, D, out.data() + i * D);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return push("gather", {table.id}, std::move(out),
              [idv = std::move(idv), D](Graph& g, int self) {
                const int ti = g.nodes_[self].inputs[0];
                const T* dy = g.nodes_[self].grad.data();
                T* dt = g.grad_buffer(ti).data();
                for (std::size_t i = 0; i < idv.size(); ++i) {
                  T* row = dt + static_cast<std::size_t>(idv[i]) * D;
                  for (std::size_t j = 0; j < D; ++j) row[j] += dy[i * D + j];
                }
              });
}

template <typename T>
Var Graph<T>::pick(Var x, std::span<const int> labels) {
  const Shape& xs = shape(x);
  if (xs.size() != 2 || xs[0] != labels.size()) {
    shape_error("pick", x.id, -1,
                "expects [N, C] with N = " + std::to_string(labels.size()));
  }
  const std::size_t N = xs[0], C = xs[1];
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= C) {
      throw UsageError("pick: label " + std::to_string(l) + " out of range for " +
                       std::to_string(C) + " classes");
    }
  }
  Tensor<T> out(Shape{N});
  for (std::size_t n = 0; n < N; ++n) out[n] = value(x)[n * C + labels[n]];
  std::vector<int> lv(labels.begin(), labels.end());
  return push("pick", {x.id}, std::move(out),
              [lv = std::move(lv), C](Graph& g, int self) {
                const int xi = g.nodes_[self].inputs[0];
                const T* dy = g.nodes_[self].grad.data();
                T* dx = g.grad_buffer(xi).data();
                for (std::size_t n = 0; n < lv.size(); ++n) dx[n * C + lv[n]] += dy[n];
              });
}

template <typename T>
Var Graph<T>::concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = shape(parts[0]);
  if (axis >= first.size()) shape_error("concat", parts[0].id, -1, "axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  for (Var p : parts) {
    const Shape& s = shape(p);
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) shape_error("concat", parts[0].id, p.id, "axis " + std::to_string(axis));
    out_shape[axis] += s[axis];
    ids.push_back(p.id);
    widths.push_back(s[axis]);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t total = out_shape[axis];
  Tensor<T> out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const T* src = value(parts[p]).data();
    const std::size_t chunk = widths[p] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * chunk, chunk, out.data() + (o * total + offset) * inner);
    }
    offset += widths[p];
  }
  return push("concat", std::move(ids), std::move(out),
              [widths, outer, inner, total](Graph& g, int self) {
                const T* dy = g.nodes_[self].grad.data();
                std::size_t offset = 0;
                for (std::size_t p = 0; p < widths.size(); ++p) {
                  const int pi = g.nodes_[self].inputs[p];
                  const std::size_t chunk = widths[p] * inner;
                  if (g.needs(pi)) {
                    T* dp = g.grad_buffer(pi).data();
                    for (std::size_t o = 0; o < outer; ++o) {
                      const T* s = dy + (o * total + offset) * inner;
                      for (std::size_t j = 0; j < chunk; ++j) dp[o * chunk + j] += s[j];
                    }
                  }
                  offset += widths[p];
                }
              });
}

template <typename T>
Var Graph<T>::slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& xs = shape(x);
  if (axis >= xs.size() || begin > end || end > xs[axis]) {
    shape_error("slice", x.id, -1,
                "axis " + std::to_string(axis) + " range [" + std::to_string(begin) +
                    "," + std::to_string(end) + ")");
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xs[i];
  for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
  const std::size_t full = xs[axis], width = end - begin;
  Shape out_shape = xs;
  out_shape[axis] = width;
  Tensor<T> out(out_shape);
  const T* src = value(x).data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(src + (o * full + begin) * inner, width * inner,
                out.data() + o * width * inner);
  }
  return push("slice", {x.id}, std::move(out),
              [outer, inner, full, width, begin](Graph& g, int self) {
                const int xi = g.nodes_[self].inputs[0];
                const T* dy = g.nodes_[self].grad.data();
                T* dx = g.grad_buffer(xi).data();
                for (std::size_t o = 0; o < outer; ++o) {
                  T* d = dx + (o * full + begin) * inner;
                  const T* s = dy + o * width * inner;
                  for (std::size_t j = 0; j < width * inner; ++j) d[j] += s[j];
                }
              });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var Graph<T>::sum(Var x) {
  T total = 0;
  for (T v : value(x).values()) total += v;
  return push("sum", {x.id}, Tensor<T>::scalar(total), [](Graph& g, int self) {
    const int xi = g.nodes_[self].inputs[0];
    const T d = g.nodes_[self].grad[0];
    Tensor<T>& dx = g.grad_buffer(xi);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d;
  });
}

template <typename T>
Var Graph<T>::mean(Var x) {
  const std::size_t n = value(x).size();
  if (n == 0) shape_error("mean", x.id, -1, "empty input");
  T total = 0;
  for (T v : value(x).values()) total += v;
  const T inv = T(1) / static_cast<T>(n);
  return push("mean", {x.id}, Tensor<T>::scalar(total * inv),
              [inv](Graph& g, int self) {
                const int xi = g.nodes_[self].inputs[0];
                const T d = g.nodes_[self].grad[0] * inv;
                Tensor<T>& dx = g.grad_buffer(xi);
                for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d;
              });
}

template <typename T>
Var Graph<T>::sum_last(Var x) {
  const Shape& xs = shape(x);
  if (xs.empty()) shape_error("sum_last", x.id, -1, "rank 0 input");
  const std::size_t D = xs.back();
  const std::size_t rows = value(x).size() / D;
  Tensor<T> out(without_last(xs));
  const T* in = value(x).data();
  for (std::size_t r = 0; r < rows; ++r) {
    T total = 0;
    for (std::size_t j = 0; j < D; ++j) total += in[r * D + j];
    out[r] = total;
  }
  return push("sum_last", {x.id}, std::move(out), [D, rows](Graph& g, int self) {
    const int xi = g.nodes_[self].inputs[0];
    const T* dy = g.nodes_[self].grad.data();
    T* dx = g.grad_buffer(xi).data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < D; ++j) dx[r * D + j] += dy[r];
    }
  });
}

// ---------------------------------------------------------------------------
// Backward

template <typename T>
GradMap<T> Graph<T>::backward(Var loss, T seed) {
  const Node& ln = node(loss);
  if (ln.value.size() != 1) {
    throw ShapeError("backward: loss node " + describe(loss.id) + " is not scalar");
  }
  for (auto& n : nodes_) n.grad = Tensor<T>();
  grad_buffer(loss.id)[0] = seed;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, i);
  }
  GradMap<T> out;
  for (const auto& [key, id] : param_nodes_) {
    const Node& n = nodes_[id];
    if (!n.requires_grad) continue;
    if (n.grad.empty()) {
      out[key.second] = Tensor<T>(n.value.shape());
    } else {
      out[key.second] = n.grad;
    }
  }
  return out;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace pfrec
