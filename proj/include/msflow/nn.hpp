#pragma once

#include <cmath>
#include <string>

#include "msflow/autodiff.hpp"
#include "msflow/random.hpp"

// Layers hold only their shapes and parameter paths. The call operators take
// either a mutable ParameterSet (training) or a const one (inference).

namespace msf::nn {

// Glorot-uniform weights.
inline Tensor glorot(std::size_t rows, std::size_t cols, RandomStream& rng, std::size_t fan_in, std::size_t fan_out) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w(Shape{rows, cols});
  for (auto& v : w.data()) v = (2.0 * rng.uniform() - 1.0) * a;
  return w;
}

// y = x W + b, applied row-wise.
struct Linear {
  std::string path;
  std::size_t in = 0, out = 0;
  bool bias = true;

  void init(ParameterSet& ps, RandomStream& rng) const {
    ps.add(path + ".weight", glorot(in, out, rng, in, out));
    if (bias) ps.add(path + ".bias", Tensor(Shape{1, out}));
  }
  template <class PS>
  Var operator()(Graph& g, PS& ps, Var x) const {
    require(x.cols() == in, path + ": expected " + std::to_string(in) + " input columns, got " + std::to_string(x.cols()));
    Var y = matmul(x, g.param(ps, path + ".weight"));
    return bias ? add(y, g.param(ps, path + ".bias")) : y;
  }
};

// Two affine maps with a tanh between them.
struct Mlp {
  Linear first, second;

  Mlp() = default;
  Mlp(const std::string& path, std::size_t in, std::size_t hidden, std::size_t out)
      : first{path + ".0", in, hidden}, second{path + ".1", hidden, out} {}

  std::size_t in() const { return first.in; }
  std::size_t out() const { return second.out; }
  void init(ParameterSet& ps, RandomStream& rng) const {
    first.init(ps, rng);
    second.init(ps, rng);
  }
  template <class PS>
  Var operator()(Graph& g, PS& ps, Var x) const { return second(g, ps, tanh(first(g, ps, x))); }
};

// Causal convolution along rows (time), left zero-padded, plus bias.
struct CausalConv {
  std::string path;
  std::size_t in = 0, out = 0, kernel = 1, dilation = 1;

  void init(ParameterSet& ps, RandomStream& rng) const {
    ps.add(path + ".weight", glorot(kernel * in, out, rng, kernel * in, out));
    ps.add(path + ".bias", Tensor(Shape{1, out}));
  }
  template <class PS>
  Var operator()(Graph& g, PS& ps, Var x) const {
    require(x.cols() == in, path + ": expected " + std::to_string(in) + " channels, got " + std::to_string(x.cols()));
    return add(causal_conv1d(x, g.param(ps, path + ".weight"), kernel, dilation), g.param(ps, path + ".bias"));
  }
};

// Gated recurrent unit; rows of x and h are independent sequences.
//   z = s(x Wz + h Uz + bz), r = s(x Wr + h Ur + br)
//   n = tanh(x Wn + bn + r * (h Un))
//   h' = n + z * (h - n)
struct GruCell {
  std::string path;
  std::size_t in = 0, hidden = 0;

  void init(ParameterSet& ps, RandomStream& rng) const {
    ps.add(path + ".wx", glorot(in, 3 * hidden, rng, in, hidden));
    ps.add(path + ".wh", glorot(hidden, 3 * hidden, rng, hidden, hidden));
    ps.add(path + ".bias", Tensor(Shape{1, 3 * hidden}));
  }

  template <class PS>
  Var step(Graph& g, PS& ps, Var x, Var h) const {
    require(x.cols() == in, path + ": expected " + std::to_string(in) + " inputs, got " + std::to_string(x.cols()));
    Var gx = add(matmul(x, g.param(ps, path + ".wx")), g.param(ps, path + ".bias"));
    Var gh = matmul(h, g.param(ps, path + ".wh"));
    const std::size_t H = hidden;
    Var z = sigmoid(add(slice_cols(gx, 0, H), slice_cols(gh, 0, H)));
    Var r = sigmoid(add(slice_cols(gx, H, H), slice_cols(gh, H, H)));
    Var n = tanh(add(slice_cols(gx, 2 * H, H), mul(r, slice_cols(gh, 2 * H, H))));
    return add(n, mul(z, sub(h, n)));
  }
};

}  // namespace msf::nn
