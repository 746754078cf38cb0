#pragma once

#include <complex>
#include <memory>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "msflow/error.hpp"
#include "msflow/tensor.hpp"

namespace msf {

using Complex = std::complex<double>;

// Discrete Fourier transform of a fixed length n. Powers of two use an
// iterative radix-2 kernel; any other length goes through Bluestein's chirp-z
// reformulation on a padded power-of-two plan.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n) {
    require(n >= 1, "FftPlan: length must be >= 1");
    if (is_pow2(n)) {
      build_radix2();
    } else {
      build_bluestein();
    }
  }

  std::size_t size() const noexcept { return n_; }

  // In place. Forward uses e^{-2 pi i kt/n}; inverse uses e^{+...} and is not
  // scaled by 1/n.
  void transform(std::span<Complex> x, bool inverse = false) const {
    require(x.size() == n_, "FftPlan: buffer length mismatch");
    if (!chirp_.empty()) {
      bluestein(x, inverse);
    } else {
      radix2(x, inverse);
    }
  }

 private:
  static bool is_pow2(std::size_t n) { return (n & (n - 1)) == 0; }

  void build_radix2() {
    rev_.resize(n_);
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n_) ++bits;
    for (std::size_t i = 0; i < n_; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b)
        if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
      rev_[i] = r;
    }
    twiddle_.resize(n_ / 2 + 1);
    for (std::size_t k = 0; k < twiddle_.size(); ++k) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n_);
      twiddle_[k] = Complex(std::cos(a), std::sin(a));
    }
  }

  void radix2(std::span<Complex> x, bool inverse) const {
    const std::size_t n = n_;
    for (std::size_t i = 0; i < n; ++i)
      if (i < rev_[i]) std::swap(x[i], x[rev_[i]]);
    for (std::size_t len = 2; len <= n; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t step = n / len;
      for (std::size_t start = 0; start < n; start += len) {
        for (std::size_t j = 0; j < half; ++j) {
          Complex w = twiddle_[j * step];
          if (inverse) w = std::conj(w);
          const Complex u = x[start + j];
          const Complex v = x[start + j + half] * w;
          x[start + j] = u + v;
          x[start + j + half] = u - v;
        }
      }
    }
  }

  void build_bluestein() {
    std::size_t m = 1;
    while (m < 2 * n_ - 1) m <<= 1;
    inner_ = std::make_shared<FftPlan>(m);
    chirp_.resize(n_);
    const std::size_t two_n = 2 * n_;
    for (std::size_t k = 0; k < n_; ++k) {
      // k^2 mod 2n keeps the phase argument small and exact.
      const std::size_t k2 = (k * k) % two_n;
      const double a = std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n_);
      chirp_[k] = Complex(std::cos(a), std::sin(a));  // e^{+i pi k^2 / n}
    }
    kernel_fwd_.assign(m, Complex{});
    kernel_fwd_[0] = chirp_[0];
    for (std::size_t k = 1; k < n_; ++k) kernel_fwd_[k] = kernel_fwd_[m - k] = chirp_[k];
    inner_->transform(kernel_fwd_);
    kernel_inv_.assign(m, Complex{});
    kernel_inv_[0] = std::conj(chirp_[0]);
    for (std::size_t k = 1; k < n_; ++k) kernel_inv_[k] = kernel_inv_[m - k] = std::conj(chirp_[k]);
    inner_->transform(kernel_inv_);
  }

  void bluestein(std::span<Complex> x, bool inverse) const {
    const std::size_t m = inner_->size();
    std::vector<Complex> a(m, Complex{});
    // forward: X_k = conj(c_k) * sum_t (x_t conj(c_t)) c_{k-t}
    for (std::size_t t = 0; t < n_; ++t) a[t] = x[t] * (inverse ? chirp_[t] : std::conj(chirp_[t]));
    inner_->transform(a);
    const auto& kern = inverse ? kernel_inv_ : kernel_fwd_;
    for (std::size_t i = 0; i < m; ++i) a[i] *= kern[i];
    inner_->transform(a, true);
    const double scale = 1.0 / static_cast<double>(m);
    for (std::size_t k = 0; k < n_; ++k)
      x[k] = a[k] * scale * (inverse ? chirp_[k] : std::conj(chirp_[k]));
  }

  std::size_t n_;
  std::vector<std::size_t> rev_;
  std::vector<Complex> twiddle_;
  std::vector<Complex> chirp_;
  std::vector<Complex> kernel_fwd_, kernel_inv_;
  std::shared_ptr<FftPlan> inner_;
};

// Spectrum of a real signal: bins 0..floor(n/2), X_k = sum_t x_t e^{-2 pi i kt/n}.
inline std::vector<Complex> fft_real(std::span<const double> signal) {
  require(!signal.empty(), "fft_real: empty signal");
  const FftPlan plan(signal.size());
  std::vector<Complex> buf(signal.begin(), signal.end());
  plan.transform(buf);
  buf.resize(signal.size() / 2 + 1);
  return buf;
}

inline std::vector<Complex> fft_real(const Tensor& signal) { return fft_real(std::span(signal.data())); }

// Inverse of fft_real for a signal of length n.
inline std::vector<double> ifft_real(std::span<const Complex> half, std::size_t n) {
  require(n >= 1 && half.size() == n / 2 + 1, "ifft_real: spectrum length must be n/2+1");
  std::vector<Complex> full(n);
  for (std::size_t k = 0; k < half.size(); ++k) full[k] = half[k];
  for (std::size_t k = half.size(); k < n; ++k) full[k] = std::conj(half[n - k]);
  const FftPlan plan(n);
  plan.transform(full, true);
  std::vector<double> out(n);
  for (std::size_t t = 0; t < n; ++t) out[t] = full[t].real() / static_cast<double>(n);
  return out;
}

}  // namespace msf
