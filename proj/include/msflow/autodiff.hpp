#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "msflow/error.hpp"
#include "msflow/fft.hpp"
#include "msflow/random.hpp"
#include "msflow/tensor.hpp"

namespace msf {

// Named learnable tensors. Paths are unique; a gradient buffer, once
// allocated, always has the shape of its parameter.
class ParameterSet {
 public:
  struct Entry {
    Tensor value;
    Tensor grad;
    bool requires_grad = true;
  };

  void add(const std::string& path, Tensor value, bool requires_grad = true) {
    if (!value.all_finite()) throw ContractViolation("ParameterSet: non-finite initial value for " + path);
    auto [it, inserted] = entries_.try_emplace(path);
    if (!inserted) throw ContractViolation("ParameterSet: duplicate parameter path '" + path + "'");
    it->second.grad = Tensor(value.shape());
    it->second.value = std::move(value);
    it->second.requires_grad = requires_grad;
  }

  bool contains(const std::string& path) const { return entries_.count(path) != 0; }

  Entry& entry(const std::string& path) {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw ContractViolation("ParameterSet: unknown parameter '" + path + "'");
    return it->second;
  }
  const Entry& entry(const std::string& path) const {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw ContractViolation("ParameterSet: unknown parameter '" + path + "'");
    return it->second;
  }
  Tensor& value(const std::string& path) { return entry(path).value; }
  const Tensor& value(const std::string& path) const { return entry(path).value; }

  std::map<std::string, Entry>& entries() noexcept { return entries_; }
  const std::map<std::string, Entry>& entries() const noexcept { return entries_; }

  void zero_grad() {
    for (auto& [_, e] : entries_) e.grad.fill(0.0);
  }
  void set_requires_grad(bool flag) {
    for (auto& [_, e] : entries_) e.requires_grad = flag;
  }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += e.value.size();
    return n;
  }

  // Copies every entry of `other` under `prefix`.
  void merge(const ParameterSet& other, const std::string& prefix = "") {
    for (const auto& [path, e] : other.entries_) add(prefix + path, e.value, e.requires_grad);
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (auto ia = a.entries_.begin(), ib = b.entries_.begin(); ia != a.entries_.end(); ++ia, ++ib) {
      if (ia->first != ib->first || !(ia->second.value == ib->second.value)) return false;
    }
    return true;
  }

 private:
  std::map<std::string, Entry> entries_;
};

class Graph;

// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Tape of primitive operations recorded in evaluation order. backward()
// replays it in reverse and accumulates exact gradients into every flagged
// parameter of the ParameterSets that were bound with param().
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  Graph() { nodes_.reserve(256); }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value) { return push(std::move(value), "constant", nullptr, false); }

  Var param(ParameterSet& ps, const std::string& path) {
    auto key = std::make_pair(&ps, path);
    if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return Var{this, it->second};
    auto& e = ps.entry(path);
    Var v = push(e.value, "param", nullptr, e.requires_grad);
    nodes_[v.id].param = &e;
    param_nodes_.emplace(std::move(key), v.id);
    return v;
  }

  // Read-only binding: the parameter enters as a constant (inference).
  Var param(const ParameterSet& ps, const std::string& path) {
    auto key = std::make_pair(&ps, path);
    if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return Var{this, it->second};
    Var v = push(ps.entry(path).value, "param", nullptr, false);
    param_nodes_.emplace(std::move(key), v.id);
    return v;
  }

  Var push(Tensor value, std::string_view op, BackwardFn fn, bool needs_grad) {
    if (!value.all_finite()) throw NumericFailure(std::string("non-finite value produced by primitive '") + std::string(op) + "'");
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient accumulator of a node; allocated on first use.
  Tensor& grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  // Reverse sweep from a scalar loss. Parameter gradients are added to the
  // owning ParameterSet gradient buffers (callers zero them between steps).
  void backward(Var loss) {
    require(loss.graph == this, "backward: loss belongs to another graph");
    if (nodes_[loss.id].value.size() != 1)
      throw ContractViolation("backward: loss must be scalar, got shape " + shape_str(nodes_[loss.id].value.shape()));
    if (!nodes_[loss.id].needs_grad) return;
    grad(loss).fill(1.0);
    for (std::int64_t i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, n.grad);  // writes only to earlier nodes
      if (n.param) {
        if (!n.grad.all_finite()) throw NumericFailure("non-finite gradient reached a parameter");
        auto& pg = n.param->grad;
        if (pg.size() != n.grad.size()) pg = Tensor(n.param->value.shape());
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
      }
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool needs_grad = false;
    ParameterSet::Entry* param = nullptr;
  };
  std::vector<Node> nodes_;
  std::map<std::pair<const ParameterSet*, std::string>, std::uint32_t> param_nodes_;
};

inline const Tensor& Var::value() const { return graph->value(*this); }

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

inline MapC view(const Tensor& t) {
  return MapC(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
inline MapM view(Tensor& t) {
  return MapM(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

inline Graph& same_graph(Var a, Var b) {
  require(a.graph != nullptr && a.graph == b.graph, "operands belong to different graphs");
  return *a.graph;
}

// Sum with values sorted first, so the result does not depend on input order.
inline double sorted_sum(std::vector<double>& buf) {
  std::sort(buf.begin(), buf.end());
  double s = 0.0;
  for (double v : buf) s += v;
  return s;
}

template <class F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out(Shape{a.rows(), a.cols()});
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

inline std::size_t bdim(std::size_t a, std::size_t b, const char* op) {
  if (a == b || b == 1) return a;
  if (a == 1) return b;
  throw ContractViolation(std::string(op) + ": incompatible broadcast extents " + std::to_string(a) + " and " +
                          std::to_string(b));
}

// Reduces a gradient of the broadcast output shape back onto an operand.
inline void accumulate_broadcast(Tensor& dst, const Tensor& g, std::size_t rows, std::size_t cols) {
  const std::size_t dr = dst.rows(), dc = dst.cols();
  if (dr == rows && dc == cols) {
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    return;
  }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[(dr == 1 ? 0 : r) * dc + (dc == 1 ? 0 : c)] += g[r * cols + c];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives. Every operation treats its operands as 2-D (see Tensor::rows/cols).
// Binary elementwise operations broadcast along any extent equal to 1.
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t rows = detail::bdim(av.rows(), bv.rows(), "add"), cols = detail::bdim(av.cols(), bv.cols(), "add");
  Tensor out(Shape{rows, cols});
  const std::size_t ar = av.rows(), ac = av.cols(), br = bv.rows(), bc = bv.cols();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = av[(ar == 1 ? 0 : r) * ac + (ac == 1 ? 0 : c)] + bv[(br == 1 ? 0 : r) * bc + (bc == 1 ? 0 : c)];
  return g.push(std::move(out), "add",
                [a, b, rows, cols](Graph& gr, const Tensor& go) {
                  if (gr.needs_grad(a)) detail::accumulate_broadcast(gr.grad(a), go, rows, cols);
                  if (gr.needs_grad(b)) detail::accumulate_broadcast(gr.grad(b), go, rows, cols);
                },
                g.needs_grad(a) || g.needs_grad(b));
}

inline Var sub(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t rows = detail::bdim(av.rows(), bv.rows(), "sub"), cols = detail::bdim(av.cols(), bv.cols(), "sub");
  Tensor out(Shape{rows, cols});
  const std::size_t ar = av.rows(), ac = av.cols(), br = bv.rows(), bc = bv.cols();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = av[(ar == 1 ? 0 : r) * ac + (ac == 1 ? 0 : c)] - bv[(br == 1 ? 0 : r) * bc + (bc == 1 ? 0 : c)];
  return g.push(std::move(out), "sub",
                [a, b, rows, cols](Graph& gr, const Tensor& go) {
                  if (gr.needs_grad(a)) detail::accumulate_broadcast(gr.grad(a), go, rows, cols);
                  if (gr.needs_grad(b)) {
                    Tensor neg = go;
                    for (auto& v : neg.data()) v = -v;
                    detail::accumulate_broadcast(gr.grad(b), neg, rows, cols);
                  }
                },
                g.needs_grad(a) || g.needs_grad(b));
}

inline Var mul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t ar = av.rows(), ac = av.cols(), br = bv.rows(), bc = bv.cols();
  const std::size_t rows = detail::bdim(ar, br, "mul"), cols = detail::bdim(ac, bc, "mul");
  Tensor out(Shape{rows, cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = av[(ar == 1 ? 0 : r) * ac + (ac == 1 ? 0 : c)] * bv[(br == 1 ? 0 : r) * bc + (bc == 1 ? 0 : c)];
  return g.push(std::move(out), "mul",
                [a, b, rows, cols, ar, ac, br, bc](Graph& gr, const Tensor& go) {
                  const Tensor& av2 = gr.value(a);
                  const Tensor& bv2 = gr.value(b);
                  if (gr.needs_grad(a)) {
                    Tensor ga(Shape{rows, cols});
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < cols; ++c)
                        ga[r * cols + c] = go[r * cols + c] * bv2[(br == 1 ? 0 : r) * bc + (bc == 1 ? 0 : c)];
                    detail::accumulate_broadcast(gr.grad(a), ga, rows, cols);
                  }
                  if (gr.needs_grad(b)) {
                    Tensor gb(Shape{rows, cols});
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < cols; ++c)
                        gb[r * cols + c] = go[r * cols + c] * av2[(ar == 1 ? 0 : r) * ac + (ac == 1 ? 0 : c)];
                    detail::accumulate_broadcast(gr.grad(b), gb, rows, cols);
                  }
                },
                g.needs_grad(a) || g.needs_grad(b));
}

inline Var scale(Var a, double k) {
  Graph& g = *a.graph;
  return g.push(detail::map_unary(a.value(), [k](double x) { return k * x; }), "scale",
                [a, k](Graph& gr, const Tensor& go) {
                  Tensor& ga = gr.grad(a);
                  for (std::size_t i = 0; i < go.size(); ++i) ga[i] += k * go[i];
                },
                g.needs_grad(a));
}

inline Var add_scalar(Var a, double k) {
  Graph& g = *a.graph;
  return g.push(detail::map_unary(a.value(), [k](double x) { return x + k; }), "add_scalar",
                [a](Graph& gr, const Tensor& go) {
                  Tensor& ga = gr.grad(a);
                  for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                },
                g.needs_grad(a));
}

inline Var exp(Var a) {
  Graph& g = *a.graph;
  Tensor y = detail::map_unary(a.value(), [](double x) { return std::exp(x); });
  Tensor yc = g.needs_grad(a) ? y : Tensor();
  return g.push(std::move(y), "exp",
                [a, yc = std::move(yc)](Graph& gr, const Tensor& go) {
                  Tensor& ga = gr.grad(a);
                  for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * yc[i];
                },
                g.needs_grad(a));
}

inline Var log(Var a) {
  Graph& g = *a.graph;
  for (double x : a.value().data())
    if (!(x > 0.0)) throw NumericFailure("primitive 'log' received a non-positive argument");
  return g.push(detail::map_unary(a.value(), [](double x) { return std::log(x); }), "log",
                [a](Graph& gr, const Tensor& go) {
                  const Tensor& x = gr.value(a);
                  Tensor& ga = gr.grad(a);
                  for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] / x[i];
                },
                g.needs_grad(a));
}

inline Var tanh(Var a) {
  Graph& g = *a.graph;
  Tensor y = detail::map_unary(a.value(), [](double x) { return std::tanh(x); });
  Tensor yc = g.needs_grad(a) ? y : Tensor();
  return g.push(std::move(y), "tanh",
                [a, yc = std::move(yc)](Graph& gr, const Tensor& go) {
                  Tensor& ga = gr.grad(a);
                  for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * (1.0 - yc[i] * yc[i]);
                },
                g.needs_grad(a));
}

inline Var sigmoid(Var a) {
  Graph& g = *a.graph;
  Tensor y = detail::map_unary(a.value(), [](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  Tensor yc = g.needs_grad(a) ? y : Tensor();
  return g.push(std::move(y), "sigmoid",
                [a, yc = std::move(yc)](Graph& gr, const Tensor& go) {
                  Tensor& ga = gr.grad(a);
                  for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * yc[i] * (1.0 - yc[i]);
                },
                g.needs_grad(a));
}

// Row-wise softmax, max-shifted.
inline Var softmax_rows(Var a) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  const std::size_t R = x.rows(), C = x.cols();
  Tensor y(Shape{R, C});
  std::vector<double> buf(C);
  for (std::size_t r = 0; r < R; ++r) {
    double m = -INFINITY;
    for (std::size_t c = 0; c < C; ++c) m = std::max(m, x[r * C + c]);
    for (std::size_t c = 0; c < C; ++c) buf[c] = y[r * C + c] = std::exp(x[r * C + c] - m);
    const double s = detail::sorted_sum(buf);
    for (std::size_t c = 0; c < C; ++c) y[r * C + c] /= s;
  }
  Tensor yc = g.needs_grad(a) ? y : Tensor();
  return g.push(std::move(y), "softmax",
                [a, yc = std::move(yc), R, C](Graph& gr, const Tensor& go) {
                  Tensor& ga = gr.grad(a);
                  for (std::size_t r = 0; r < R; ++r) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < C; ++c) dot += go[r * C + c] * yc[r * C + c];
                    for (std::size_t c = 0; c < C; ++c) ga[r * C + c] += yc[r * C + c] * (go[r * C + c] - dot);
                  }
                },
                g.needs_grad(a));
}

// a (m x k) * b (k x n).
inline Var matmul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.cols() == bv.rows(), "matmul: inner extents differ (" + std::to_string(av.cols()) + " vs " +
                                      std::to_string(bv.rows()) + ")");
  Tensor out(Shape{av.rows(), bv.cols()});
  detail::view(out).noalias() = detail::view(av) * detail::view(bv);
  return g.push(std::move(out), "matmul",
                [a, b](Graph& gr, const Tensor& go) {
                  auto G = detail::view(go);
                  if (gr.needs_grad(a)) detail::view(gr.grad(a)).noalias() += G * detail::view(gr.value(b)).transpose();
                  if (gr.needs_grad(b)) detail::view(gr.grad(b)).noalias() += detail::view(gr.value(a)).transpose() * G;
                },
                g.needs_grad(a) || g.needs_grad(b));
}

// a (m x k) * b^T where b is (n x k).
inline Var matmul_nt(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.cols() == bv.cols(), "matmul_nt: inner extents differ");
  Tensor out(Shape{av.rows(), bv.rows()});
  detail::view(out).noalias() = detail::view(av) * detail::view(bv).transpose();
  return g.push(std::move(out), "matmul_nt",
                [a, b](Graph& gr, const Tensor& go) {
                  auto G = detail::view(go);
                  if (gr.needs_grad(a)) detail::view(gr.grad(a)).noalias() += G * detail::view(gr.value(b));
                  if (gr.needs_grad(b)) detail::view(gr.grad(b)).noalias() += G.transpose() * detail::view(gr.value(a));
                },
                g.needs_grad(a) || g.needs_grad(b));
}

// Affine map x W + b with b broadcast over rows.
inline Var affine(Var x, Var w, Var b) { return add(matmul(x, w), b); }

inline Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no operands");
  Graph& g = *parts[0].graph;
  const std::size_t R = parts[0].rows();
  std::size_t C = 0;
  bool ng = false;
  for (Var p : parts) {
    require(p.graph == &g, "concat_cols: operands belong to different graphs");
    require(p.rows() == R, "concat_cols: row extents differ");
    C += p.cols();
    ng = ng || g.needs_grad(p);
  }
  Tensor out(Shape{R, C});
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& v = p.value();
    const std::size_t pc = v.cols();
    for (std::size_t r = 0; r < R; ++r) std::copy_n(v.data().data() + r * pc, pc, out.data().data() + r * C + off);
    off += pc;
  }
  return g.push(std::move(out), "concat_cols",
                [parts, R, C](Graph& gr, const Tensor& go) {
                  std::size_t o = 0;
                  for (Var p : parts) {
                    const std::size_t pc = gr.value(p).cols();
                    if (gr.needs_grad(p)) {
                      Tensor& gp = gr.grad(p);
                      for (std::size_t r = 0; r < R; ++r)
                        for (std::size_t c = 0; c < pc; ++c) gp[r * pc + c] += go[r * C + o + c];
                    }
                    o += pc;
                  }
                },
                ng);
}

inline Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no operands");
  Graph& g = *parts[0].graph;
  const std::size_t C = parts[0].cols();
  std::size_t R = 0;
  bool ng = false;
  for (Var p : parts) {
    require(p.graph == &g, "concat_rows: operands belong to different graphs");
    require(p.cols() == C, "concat_rows: column extents differ");
    R += p.rows();
    ng = ng || g.needs_grad(p);
  }
  Tensor out(Shape{R, C});
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& v = p.value();
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += v.size();
  }
  return g.push(std::move(out), "concat_rows",
                [parts](Graph& gr, const Tensor& go) {
                  std::size_t o = 0;
                  for (Var p : parts) {
                    const std::size_t n = gr.value(p).size();
                    if (gr.needs_grad(p)) {
                      Tensor& gp = gr.grad(p);
                      for (std::size_t i = 0; i < n; ++i) gp[i] += go[o + i];
                    }
                    o += n;
                  }
                },
                ng);
}

inline Var slice_cols(Var a, std::size_t start, std::size_t len) {
  Graph& g = *a.graph;
  const Tensor& v = a.value();
  const std::size_t R = v.rows(), C = v.cols();
  require(start + len <= C, "slice_cols: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                                ") exceeds " + std::to_string(C) + " columns");
  Tensor out(Shape{R, len});
  for (std::size_t r = 0; r < R; ++r) std::copy_n(v.data().data() + r * C + start, len, out.data().data() + r * len);
  return g.push(std::move(out), "slice_cols",
                [a, start, len, R, C](Graph& gr, const Tensor& go) {
                  Tensor& ga = gr.grad(a);
                  for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t c = 0; c < len; ++c) ga[r * C + start + c] += go[r * len + c];
                },
                g.needs_grad(a));
}

inline Var slice_rows(Var a, std::size_t start, std::size_t len) {
  Graph& g = *a.graph;
  const Tensor& v = a.value();
  const std::size_t R = v.rows(), C = v.cols();
  require(start + len <= R, "slice_rows: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                                ") exceeds " + std::to_string(R) + " rows");
  Tensor out(Shape{len, C});
  std::copy_n(v.data().data() + start * C, len * C, out.data().data());
  return g.push(std::move(out), "slice_rows",
                [a, start, C](Graph& gr, const Tensor& go) {
                  Tensor& ga = gr.grad(a);
                  for (std::size_t i = 0; i < go.size(); ++i) ga[start * C + i] += go[i];
                },
                g.needs_grad(a));
}

// Row gather: out row i is a row idx[i]; repeated indices accumulate gradient.
inline Var gather_rows(Var a, std::vector<std::size_t> idx) {
  Graph& g = *a.graph;
  const Tensor& v = a.value();
  const std::size_t R = v.rows(), C = v.cols();
  Tensor out(Shape{idx.size(), C});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] < R, "gather_rows: index " + std::to_string(idx[i]) + " out of " + std::to_string(R) + " rows");
    std::copy_n(v.data().data() + idx[i] * C, C, out.data().data() + i * C);
  }
  return g.push(std::move(out), "gather_rows",
                [a, idx = std::move(idx), C](Graph& gr, const Tensor& go) {
                  Tensor& ga = gr.grad(a);
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::size_t c = 0; c < C; ++c) ga[idx[i] * C + c] += go[i * C + c];
                },
                g.needs_grad(a));
}

// Full reduction to a 1x1 scalar.
inline Var sum(Var a) {
  Graph& g = *a.graph;
  std::vector<double> buf = a.value().data();
  const double s = detail::sorted_sum(buf);
  return g.push(Tensor(Shape{1, 1}, std::vector<double>{s}), "sum",
                [a](Graph& gr, const Tensor& go) {
                  Tensor& ga = gr.grad(a);
                  for (auto& v : ga.data()) v += go[0];
                },
                g.needs_grad(a));
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

// Sum over columns: (m x n) -> (m x 1).
inline Var sum_cols(Var a) {
  Graph& g = *a.graph;
  const Tensor& v = a.value();
  const std::size_t R = v.rows(), C = v.cols();
  Tensor out(Shape{R, 1});
  std::vector<double> buf(C);
  for (std::size_t r = 0; r < R; ++r) {
    std::copy_n(v.data().data() + r * C, C, buf.data());
    out[r] = detail::sorted_sum(buf);
  }
  return g.push(std::move(out), "sum_cols",
                [a, R, C](Graph& gr, const Tensor& go) {
                  Tensor& ga = gr.grad(a);
                  for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t c = 0; c < C; ++c) ga[r * C + c] += go[r];
                },
                g.needs_grad(a));
}

// Sum over rows: (m x n) -> (1 x n).
inline Var sum_rows(Var a) {
  Graph& g = *a.graph;
  const Tensor& v = a.value();
  const std::size_t R = v.rows(), C = v.cols();
  Tensor out(Shape{1, C});
  std::vector<double> buf(R);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t r = 0; r < R; ++r) buf[r] = v[r * C + c];
    out[c] = detail::sorted_sum(buf);
  }
  return g.push(std::move(out), "sum_rows",
                [a, R, C](Graph& gr, const Tensor& go) {
                  Tensor& ga = gr.grad(a);
                  for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t c = 0; c < C; ++c) ga[r * C + c] += go[c];
                },
                g.needs_grad(a));
}

// Causal 1-D convolution over the time axis (rows). x is T x Cin, w is
// (k*Cin) x Cout with tap j applied to x[t - (k-1-j)*dilation]; positions
// before the start are zero.
inline Var causal_conv1d(Var x, Var w, std::size_t kernel, std::size_t dilation = 1) {
  Graph& g = detail::same_graph(x, w);
  const Tensor& xv = x.value();
  const std::size_t T = xv.rows(), Cin = xv.cols();
  require(kernel >= 1 && dilation >= 1, "causal_conv1d: kernel and dilation must be >= 1");
  require(w.rows() == kernel * Cin, "causal_conv1d: weight has " + std::to_string(w.rows()) + " rows, expected " +
                                        std::to_string(kernel * Cin));
  Tensor col(Shape{T, kernel * Cin});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < kernel; ++j) {
      const std::size_t back = (kernel - 1 - j) * dilation;
      if (back > t) continue;
      std::copy_n(xv.data().data() + (t - back) * Cin, Cin, col.data().data() + t * kernel * Cin + j * Cin);
    }
  Tensor out(Shape{T, w.cols()});
  detail::view(out).noalias() = detail::view(col) * detail::view(w.value());
  const bool ng = g.needs_grad(x) || g.needs_grad(w);
  return g.push(std::move(out), "causal_conv1d",
                [x, w, kernel, dilation, T, Cin, col = ng ? std::move(col) : Tensor()](Graph& gr, const Tensor& go) {
                  auto G = detail::view(go);
                  if (gr.needs_grad(w)) detail::view(gr.grad(w)).noalias() += detail::view(col).transpose() * G;
                  if (gr.needs_grad(x)) {
                    Tensor dcol(Shape{T, kernel * Cin});
                    detail::view(dcol).noalias() = G * detail::view(gr.value(w)).transpose();
                    Tensor& gx = gr.grad(x);
                    for (std::size_t t = 0; t < T; ++t)
                      for (std::size_t j = 0; j < kernel; ++j) {
                        const std::size_t back = (kernel - 1 - j) * dilation;
                        if (back > t) continue;
                        for (std::size_t c = 0; c < Cin; ++c) gx[(t - back) * Cin + c] += dcol[t * kernel * Cin + j * Cin + c];
                      }
                  }
                },
                ng);
}

// Per-channel DFT over the causal window of `window` rows ending at each t.
// Rows before the start repeat the first row. Output row t holds the real
// parts (channel-major, window/2+1 bins each) followed by the imaginary parts.
// This is a convolution with fixed Fourier kernels, evaluated with FFTs.
inline Var window_dft(Var x, std::size_t window) {
  Graph& g = *x.graph;
  require(window >= 1, "window_dft: window must be >= 1");
  const Tensor& xv = x.value();
  const std::size_t T = xv.rows(), C = xv.cols(), nb = window / 2 + 1;
  auto plan = std::make_shared<FftPlan>(window);
  Tensor out(Shape{T, 2 * C * nb});
  std::vector<Complex> buf(window);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t k = 0; k < window; ++k) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(window - 1);
        buf[k] = Complex(xv[static_cast<std::size_t>(std::max<std::ptrdiff_t>(src, 0)) * C + c], 0.0);
      }
      plan->transform(buf);
      for (std::size_t k = 0; k < nb; ++k) {
        out[t * 2 * C * nb + c * nb + k] = buf[k].real();
        out[t * 2 * C * nb + C * nb + c * nb + k] = buf[k].imag();
      }
    }
  return g.push(std::move(out), "window_dft",
                [x, window, T, C, nb, plan](Graph& gr, const Tensor& go) {
                  Tensor& gx = gr.grad(x);
                  std::vector<Complex> b(window);
                  for (std::size_t t = 0; t < T; ++t)
                    for (std::size_t c = 0; c < C; ++c) {
                      std::fill(b.begin(), b.end(), Complex{});
                      for (std::size_t k = 0; k < nb; ++k)
                        b[k] = Complex(go[t * 2 * C * nb + c * nb + k], go[t * 2 * C * nb + C * nb + c * nb + k]);
                      plan->transform(b, true);
                      for (std::size_t k = 0; k < window; ++k) {
                        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(window - 1);
                        gx[static_cast<std::size_t>(std::max<std::ptrdiff_t>(src, 0)) * C + c] += b[k].real();
                      }
                    }
                },
                g.needs_grad(x));
}

// ---------------------------------------------------------------------------
// Compositions of the primitives above.
// ---------------------------------------------------------------------------

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

inline Var square(Var a) { return mul(a, a); }

// sqrt(a + eps) through exp/log.
inline Var sqrt_eps(Var a, double eps) { return exp(scale(log(add_scalar(a, eps)), 0.5)); }

// Row-wise log-softmax: x - (m + log sum exp(x - m)) with m the (constant) row max.
inline Var log_softmax_rows(Var a) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  const std::size_t R = x.rows(), C = x.cols();
  Tensor m(Shape{R, 1});
  for (std::size_t r = 0; r < R; ++r) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, x[r * C + c]);
    m[r] = mx;
  }
  Var shifted = sub(a, g.constant(std::move(m)));
  Var lse = log(sum_cols(exp(shifted)));
  return sub(shifted, lse);
}

// Row-wise dot product of two equally shaped matrices: (m x k) -> (m x 1).
inline Var row_dot(Var a, Var b) { return sum_cols(mul(a, b)); }

}  // namespace msf
