#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "msflow/autodiff.hpp"
#include "msflow/error.hpp"
#include "msflow/nn.hpp"
#include "msflow/random.hpp"

namespace msf {

struct FlowConfig {
  std::size_t dim = 1;         // D
  std::size_t cond_dim = 64;   // width of the conditioning vector h
  std::size_t layers = 4;      // K
  std::size_t hidden = 64;     // width of the s and t networks
  double scale_clamp = 3.0;    // s = clamp * tanh(raw)

  void validate() const {
    if (dim < 1) throw ConfigError("flow.dim must be >= 1");
    if (layers < 1) throw ConfigError("flow.layers must be >= 1");
    if (hidden < 1) throw ConfigError("flow.hidden must be >= 1");
    if (!(scale_clamp > 0.0)) throw ConfigError("flow.scale_clamp must be > 0");
    if (dim == 1 && cond_dim == 0) throw ConfigError("a one-dimensional flow needs a conditioning vector");
  }
};

// Output of a pass through one layer or the stack, row-wise over a batch.
struct FlowPass {
  Var out;     // n x D
  Var logdet;  // n x 1
};

// Affine coupling y2 = z2 * exp(s(z1, h)) + t(z1, h) with z1 the first d
// coordinates, d = floor(D/2). For D = 1, d = 0 and s, t see only h.
class CouplingLayer {
 public:
  CouplingLayer() = default;
  CouplingLayer(const std::string& path, const FlowConfig& cfg)
      : D_(cfg.dim), d_(cfg.dim / 2), cond_(cfg.cond_dim), clamp_(cfg.scale_clamp),
        s_(path + ".s", d_ + cfg.cond_dim, cfg.hidden, cfg.dim - d_),
        t_(path + ".t", d_ + cfg.cond_dim, cfg.hidden, cfg.dim - d_) {}

  std::size_t split() const { return d_; }

  // The output layers start at zero so a fresh layer is the identity map.
  void init(ParameterSet& ps, RandomStream& rng, bool identity_start = true) const {
    s_.init(ps, rng);
    t_.init(ps, rng);
    if (identity_start) {
      ps.value(s_.second.path + ".weight").fill(0.0);
      ps.value(t_.second.path + ".weight").fill(0.0);
    }
  }

  template <class PS>
  FlowPass forward(Graph& g, PS& ps, Var z, Var h) const {
    check(z, h);
    auto [s, t] = scale_shift(g, ps, z, h);
    Var y2 = add(mul(passive(z), exp(s)), t);
    return {d_ == 0 ? y2 : concat_cols({slice_cols(z, 0, d_), y2}), sum_cols(s)};
  }

  template <class PS>
  FlowPass inverse(Graph& g, PS& ps, Var y, Var h) const {
    check(y, h);
    auto [s, t] = scale_shift(g, ps, y, h);
    Var z2 = mul(sub(passive(y), t), exp(scale(s, -1.0)));
    return {d_ == 0 ? z2 : concat_cols({slice_cols(y, 0, d_), z2}), scale(sum_cols(s), -1.0)};
  }

 private:
  void check(Var x, Var h) const {
    if (x.cols() != D_) throw ContractViolation("coupling: input has " + std::to_string(x.cols()) + " dims, expected " + std::to_string(D_));
    if (h.cols() != cond_ || h.rows() != x.rows())
      throw ContractViolation("coupling: condition is " + shape_str(h.value().shape()) + ", expected " +
                              std::to_string(x.rows()) + "x" + std::to_string(cond_));
  }
  Var passive(Var x) const { return d_ == 0 ? x : slice_cols(x, d_, D_ - d_); }

  template <class PS>
  std::pair<Var, Var> scale_shift(Graph& g, PS& ps, Var x, Var h) const {
    Var in = d_ == 0 ? h : cond_ == 0 ? slice_cols(x, 0, d_) : concat_cols({slice_cols(x, 0, d_), h});
    return {scale(tanh(s_(g, ps, in)), clamp_), t_(g, ps, in)};
  }

  std::size_t D_ = 1, d_ = 0, cond_ = 0;
  double clamp_ = 3.0;
  nn::Mlp s_, t_;
};

// Reverses the column order (the fixed permutation between layers).
inline Var reverse_cols(Var x) {
  const std::size_t D = x.cols();
  if (D == 1) return x;
  std::vector<Var> cols;
  for (std::size_t c = D; c-- > 0;) cols.push_back(slice_cols(x, c, 1));
  return concat_cols(cols);
}

// K coupling layers with a coordinate reversal after each; base N(0, I).
// Forward maps noise z to data y.
class FlowStack {
 public:
  explicit FlowStack(FlowConfig cfg, std::string prefix = "flow") : cfg_(cfg), prefix_(std::move(prefix)) {
    cfg_.validate();
    for (std::size_t k = 0; k < cfg_.layers; ++k) layers_.emplace_back(prefix_ + ".layer" + std::to_string(k), cfg_);
  }

  const FlowConfig& config() const { return cfg_; }
  const std::vector<CouplingLayer>& layers() const { return layers_; }

  void init(ParameterSet& ps, RandomStream& rng, bool identity_start = true) const {
    for (const auto& l : layers_) l.init(ps, rng, identity_start);
  }

  template <class PS>
  FlowPass forward(Graph& g, PS& ps, Var z, Var h) const {
    Var x = z;
    std::vector<Var> logdets;
    for (const auto& l : layers_) {
      FlowPass p = l.forward(g, ps, x, h);
      x = reverse_cols(p.out);
      logdets.push_back(p.logdet);
    }
    return {x, total(logdets)};
  }

  template <class PS>
  FlowPass inverse(Graph& g, PS& ps, Var y, Var h) const {
    Var x = y;
    std::vector<Var> logdets;
    for (std::size_t k = layers_.size(); k-- > 0;) {
      FlowPass p = layers_[k].inverse(g, ps, reverse_cols(x), h);
      x = p.out;
      logdets.push_back(p.logdet);
    }
    return {x, total(logdets)};
  }

  // log p(y | h) per row: log N(f^{-1}(y); 0, I) + log|det d f^{-1}/dy|.
  template <class PS>
  Var log_density(Graph& g, PS& ps, Var y, Var h) const {
    FlowPass p = inverse(g, ps, y, h);
    const double c = -0.5 * static_cast<double>(cfg_.dim) * std::log(2.0 * std::numbers::pi);
    Var base = add_scalar(scale(sum_cols(square(p.out)), -0.5), c);
    return add(base, p.logdet);
  }

  // n draws per row of h: z ~ N(0, I) pushed through the forward stack.
  // h is m x C; the result has m*n rows, n consecutive rows per condition.
  Tensor sample(const ParameterSet& ps, const Tensor& h, RandomStream& stream, std::size_t n) const {
    require(n >= 1, "sample: n must be >= 1");
    const std::size_t m = h.rows(), C = h.cols();
    Tensor hh(Shape{m * n, C});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < n; ++k)
        std::copy_n(h.data().begin() + static_cast<std::ptrdiff_t>(i * C), C,
                    hh.data().begin() + static_cast<std::ptrdiff_t>((i * n + k) * C));
    Graph g;
    Tensor z = draw(stream, Distribution::standard_normal, {m * n, cfg_.dim});
    return forward(g, ps, g.constant(std::move(z)), g.constant(std::move(hh))).out.value();
  }

 private:
  static Var total(const std::vector<Var>& parts) {
    Var acc = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
    return acc;
  }

  FlowConfig cfg_;
  std::string prefix_;
  std::vector<CouplingLayer> layers_;
};

}  // namespace msf
