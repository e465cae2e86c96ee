#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mtabnet/errors.hpp"

namespace mtabnet {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_product(const Shape& shape) {
  if (shape.empty()) return 0;
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

/// Dense row-major array of doubles with rank 1 or 2.
///
/// A rank-1 tensor of length d behaves as a 1 x d row when a matrix view is
/// needed. Scalars are rank-1 tensors of length 1.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_product(shape_), fill) {
    check_shape();
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_product(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<double> values) {
    return Tensor({rows, cols}, std::vector<double>(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_, 0.0); }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

  std::span<const double> values() const { return data_; }
  std::span<double> values() { return data_; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }
  std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }
  const double* data() const { return data_.data(); }
  double* data() { return data_.data(); }
  const std::vector<double>& storage() const { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

  Tensor& operator+=(const Tensor& other) {
    require_same(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  void require_same(const Tensor& other, const char* what) const {
    if (!same_shape(other)) {
      throw DimensionError(std::string(what) + ": shape " + shape_string(shape_) + " vs " +
                           shape_string(other.shape_));
    }
  }

 private:
  void check_shape() const {
    if (shape_.empty() || shape_.size() > 2) {
      throw DimensionError("tensor rank must be 1 or 2, got shape " + shape_string(shape_));
    }
    for (std::size_t d : shape_) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

namespace kernels {

/// c = a * b for row-major matrices (n x k) * (k x m).
inline void gemm(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                 std::size_t m, bool accumulate = false) {
  if (!accumulate) std::fill(c, c + n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c + i * m;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

/// c = a * b^T for a (n x k), b (m x k).
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                    std::size_t m, bool accumulate = false) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      if (accumulate) {
        c[i * m + j] += s;
      } else {
        c[i * m + j] = s;
      }
    }
  }
}

/// c = a^T * b for a (k x n), b (k x m); result n x m.
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t k, std::size_t n,
                    std::size_t m, bool accumulate = false) {
  if (!accumulate) std::fill(c, c + n * m, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * n;
    const double* brow = b + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace kernels

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  }
  Tensor c({a.rows(), b.cols()});
  kernels::gemm(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
  return c;
}

inline Tensor transpose(const Tensor& a) {
  Tensor t({a.cols(), a.rows()});
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
  return t;
}

}  // namespace mtabnet
