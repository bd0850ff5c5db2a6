#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bnasr/error.hpp"

namespace bnasr {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Scalar type selected at the entry point: 64-bit for checks, 32-bit for training.
enum class Precision { kFloat32, kFloat64 };

template <typename Real>
constexpr Precision precision_of() {
  static_assert(std::is_same_v<Real, float> || std::is_same_v<Real, double>);
  return std::is_same_v<Real, float> ? Precision::kFloat32 : Precision::kFloat64;
}

namespace detail {
inline std::atomic<bool>& finite_checks_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}
}  // namespace detail

/// Debug mode: layers verify that every produced value is finite.
inline void set_finite_checks(bool enabled) { detail::finite_checks_flag() = enabled; }
inline bool finite_checks() { return detail::finite_checks_flag(); }

/// Dense row-major array with an optional same-shape gradient slot.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0))
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<Real> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (shape_size(shape_) != data_.size()) {
      throw ShapeError("tensor of shape " + shape_str(shape_) + " cannot hold " +
                       std::to_string(data_.size()) + " values");
    }
  }

  /// Row-major matrix from nested rows, mostly for tests.
  static Tensor matrix(std::initializer_list<std::initializer_list<Real>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<Real> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }
  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }
  std::vector<Real>& storage() noexcept { return data_; }
  const std::vector<Real>& storage() const noexcept { return data_; }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  const Real& operator[](std::size_t i) const noexcept { return data_[i]; }

  Real& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * shape_[1] + j]; }
  const Real& operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * shape_[1] + j]; }

  /// Pointer to row `i` of the leading axis.
  Real* row(std::size_t i) noexcept { return data_.data() + i * (data_.size() / shape_[0]); }
  const Real* row(std::size_t i) const noexcept { return data_.data() + i * (data_.size() / shape_[0]); }

  void reshape(Shape shape) {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    shape_ = std::move(shape);
    if (!grad_.empty()) grad_.resize(data_.size());
  }

  void fill(Real value) { std::fill(data_.begin(), data_.end(), value); }

  // Gradient slot.
  bool has_grad() const noexcept { return has_grad_; }
  void enable_grad() {
    has_grad_ = true;
    grad_.assign(data_.size(), Real(0));
  }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), Real(0)); }
  std::span<Real> grad() noexcept { return grad_; }
  std::span<const Real> grad() const noexcept { return grad_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<Real> data_;
  std::vector<Real> grad_;
  bool has_grad_ = false;
};

template <typename Real>
void check_finite(const Tensor<Real>& t, const char* where) {
  if (finite_checks() && !t.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + where);
  }
}

template <typename Real>
void require_shape(const Tensor<Real>& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw ShapeError(std::string(what) + ": expected shape " + shape_str(expected) + ", got " +
                     shape_str(t.shape()));
  }
}

template <typename Real>
void require_rank(const Tensor<Real>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(t.shape()));
  }
}

/// Numerically safe log(exp(a) + exp(b)).
template <typename Real>
inline Real log_add_exp(Real a, Real b) {
  if (a == -std::numeric_limits<Real>::infinity()) return b;
  if (b == -std::numeric_limits<Real>::infinity()) return a;
  const Real hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

template <typename Real>
inline constexpr Real kNegInf = -std::numeric_limits<Real>::infinity();

}  // namespace bnasr
