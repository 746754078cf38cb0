#pragma once

// O(n^2) DFT of a real signal, bins 0..n/2.

#include <cmath>
#include <numbers>
#include <vector>

#include "msflow/fft.hpp"

namespace msf::testing {

inline std::vector<Complex> naive_dft(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<Complex> out(n / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    Complex s{};
    for (std::size_t t = 0; t < n; ++t) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      s += x[t] * Complex(std::cos(a), std::sin(a));
    }
    out[k] = s;
  }
  return out;
}

}  // namespace msf::testing
