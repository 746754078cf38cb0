#pragma once

#include <cmath>
#include <map>
#include <string>

#include "msflow/autodiff.hpp"

namespace msf {

// Scales all flagged gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_grad_norm(ParameterSet& ps, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, e] : ps.entries())
    if (e.requires_grad)
      for (double v : e.grad.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double k = max_norm / norm;
    for (auto& [_, e] : ps.entries())
      if (e.requires_grad)
        for (double& v : e.grad.data()) v *= k;
  }
  return norm;
}

// Plain stochastic gradient descent.
class Sgd {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void step(ParameterSet& ps) const {
    for (auto& [_, e] : ps.entries()) {
      if (!e.requires_grad) continue;
      for (std::size_t i = 0; i < e.value.size(); ++i) e.value[i] -= lr_ * e.grad[i];
    }
  }

 private:
  double lr_;
};

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParameterSet& ps) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (auto& [path, e] : ps.entries()) {
      if (!e.requires_grad) continue;
      auto& [m, v] = moments_[path];
      if (m.size() != e.value.size()) {
        m.assign(e.value.size(), 0.0);
        v.assign(e.value.size(), 0.0);
      }
      for (std::size_t i = 0; i < e.value.size(); ++i) {
        const double g = e.grad[i];
        m[i] = b1_ * m[i] + (1.0 - b1_) * g;
        v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
        e.value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  double lr_, b1_, b2_, eps_;
  long long t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

}  // namespace msf
