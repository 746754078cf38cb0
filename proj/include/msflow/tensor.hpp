#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "msflow/error.hpp"

namespace msf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major array of doubles. Rank 0..2 is what the primitives use;
// rank-1 tensors act as a single row.
class Tensor {
 public:
  Tensor() : shape_{0}, data_{} {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(shape_size(shape_) == data_.size(),
            "Tensor: shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                " elements");
  }

  // Construction from external data: additionally rejects non-finite entries.
  static Tensor from_data(Shape shape, std::vector<double> data) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!std::isfinite(data[i]))
        throw ContractViolation("Tensor: non-finite entry at flat index " + std::to_string(i));
    }
    return Tensor(std::move(shape), std::move(data));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor(Shape{rows, cols}, fill);
  }
  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor row(std::vector<double> v) {
    const auto n = v.size();
    return Tensor(Shape{1, n}, std::move(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rank() const noexcept { return shape_.size(); }

  // 2-D view of the tensor: rank 0 -> 1x1, rank 1 -> 1xn.
  std::size_t rows() const noexcept {
    if (shape_.size() < 2) return 1;
    return shape_size(Shape(shape_.begin(), shape_.end() - 1));
  }
  std::size_t cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const {
    require(data_.size() == 1, "Tensor::item on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  // Row r as a 1 x cols tensor.
  Tensor row_copy(std::size_t r) const {
    Tensor out(Shape{1, cols()});
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(r * cols()), cols(), out.data_.begin());
    return out;
  }
  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace msf
