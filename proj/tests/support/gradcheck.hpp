#pragma once

// Central finite-difference oracle for reverse-mode gradients. Independent of
// the backward pass: it only ever evaluates the forward program.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "msflow/autodiff.hpp"

namespace msf::testing {

struct GradCheckResult {
  double worst_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t parameters_checked = 0;
};

// `loss_fn` builds the program in the given graph and returns its scalar loss.
// The relative error of a parameter tensor is ||analytic - numeric|| /
// max(||analytic||, ||numeric||, floor).
inline GradCheckResult check_gradients(ParameterSet& ps, const std::function<Var(Graph&, ParameterSet&)>& loss_fn,
                                       double step = 1e-4, double floor = 1e-6) {
  ps.zero_grad();
  {
    Graph g;
    Var loss = loss_fn(g, ps);
    g.backward(loss);
  }
  GradCheckResult res;
  for (auto& [path, e] : ps.entries()) {
    if (!e.requires_grad) continue;
    const Tensor analytic = e.grad;
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double orig = e.value[i];
      e.value[i] = orig + step;
      double up, down;
      {
        Graph g;
        up = loss_fn(g, ps).value().item();
      }
      e.value[i] = orig - step;
      {
        Graph g;
        down = loss_fn(g, ps).value().item();
      }
      e.value[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double rel = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), floor});
    ++res.parameters_checked;
    if (rel > res.worst_relative_error || res.worst_parameter.empty()) {
      res.worst_relative_error = std::max(res.worst_relative_error, rel);
      if (rel >= res.worst_relative_error) res.worst_parameter = path;
    }
  }
  return res;
}

inline Tensor random_tensor(Shape shape, RandomStream& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

}  // namespace msf::testing
