#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "latent_atlas/errors.hpp"
#include "latent_atlas/rng.hpp"

namespace latent_atlas {

/// Dense row-major tensor of rank <= 4. Images are (channels, height, width),
/// latent vectors are rank-1, batches add a leading dimension.
template <typename T>
class Tensor {
public:
  using Scalar = T;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(numel_of(shape_)), T(0));
  }
  Tensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    assert(static_cast<std::int64_t>(data_.size()) == numel_of(shape_));
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, T value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
  }
  static Tensor gaussian(std::vector<int> shape, Rng& rng, T stddev = T(1)) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = static_cast<T>(rng.gaussian() * static_cast<double>(stddev));
    return t;
  }

  bool empty() const { return data_.empty(); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  T& operator()(int i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator()(int i) const { return data_[static_cast<std::size_t>(i)]; }
  T& operator()(int i, int j) {
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  const T& operator()(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  T& operator()(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  const T& operator()(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  T& operator()(int n, int c, int y, int x) {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  const T& operator()(int n, int c, int y, int x) const {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }
  void set_zero() { fill(T(0)); }

  /// Reinterprets the buffer with a new shape of equal element count.
  Tensor reshaped(std::vector<int> shape) const {
    if (numel_of(shape) != numel()) {
      throw UsageError("reshape: element count mismatch " + shape_string(shape_) +
                       " -> " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
    return out;
  }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  double sum() const {
    double s = 0.0;
    for (const T& v : data_) s += static_cast<double>(v);
    return s;
  }
  double mean() const { return numel() == 0 ? 0.0 : sum() / static_cast<double>(numel()); }
  double squared_norm() const {
    double s = 0.0;
    for (const T& v : data_) s += static_cast<double>(v) * static_cast<double>(v);
    return s;
  }
  double norm() const { return std::sqrt(squared_norm()); }
  double max_abs() const {
    double m = 0.0;
    for (const T& v : data_) m = std::max(m, std::abs(static_cast<double>(v)));
    return m;
  }

  static std::int64_t numel_of(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

  static std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
  }

private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<MatrixRM<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const MatrixRM<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

/// Maps the trailing dimensions of a tensor as a (rows x cols) matrix.
template <typename T>
MatMap<T> as_matrix(Tensor<T>& t, int rows, int cols) {
  assert(static_cast<std::int64_t>(rows) * cols == t.numel());
  return MatMap<T>(t.data(), rows, cols);
}
template <typename T>
ConstMatMap<T> as_matrix(const Tensor<T>& t, int rows, int cols) {
  assert(static_cast<std::int64_t>(rows) * cols == t.numel());
  return ConstMatMap<T>(t.data(), rows, cols);
}
template <typename T>
VecMap<T> as_vector(Tensor<T>& t) {
  return VecMap<T>(t.data(), t.numel());
}
template <typename T>
ConstVecMap<T> as_vector(const Tensor<T>& t) {
  return ConstVecMap<T>(t.data(), t.numel());
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
  if (!a.same_shape(b)) {
    throw UsageError(std::string(where) + ": shape mismatch, expected " +
                     Tensor<T>::shape_string(a.shape()) + " got " +
                     Tensor<T>::shape_string(b.shape()));
  }
}

/// a += scale * b
template <typename T>
void axpy(Tensor<T>& a, const Tensor<T>& b, T scale) {
  assert(a.numel() == b.numel());
  T* pa = a.data();
  const T* pb = b.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) pa[i] += scale * pb[i];
}

template <typename T>
double max_abs_difference(const Tensor<T>& a, const Tensor<T>& b) {
  assert(a.numel() == b.numel());
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

}  // namespace latent_atlas
