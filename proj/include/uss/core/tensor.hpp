#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "uss/core/error.hpp"

namespace uss {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ")";
  return os.str();
}

// Dense row-major tensor. Single precision drives training, double precision
// drives the finite-difference verification paths.
template <typename T>
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    for (int64_t d : shape_) check(d >= 0, "tensor extent must be >= 0");
    v_.assign(static_cast<size_t>(shape_numel(shape_)), T(0));
  }
  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), v_(std::move(values)) {
    check(shape_numel(shape_) == static_cast<int64_t>(v_.size()),
          "tensor shape " + shape_str(shape_) + " does not match value count");
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.v_.begin(), t.v_.end(), value);
    return t;
  }
  static Tensor scalar(T value) { return Tensor({}, {value}); }

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(v_.size()); }
  bool empty() const { return v_.empty(); }

  T* data() { return v_.data(); }
  const T* data() const { return v_.data(); }
  T& operator[](int64_t i) { return v_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return v_[static_cast<size_t>(i)]; }

  std::vector<T>& values() { return v_; }
  const std::vector<T>& values() const { return v_; }

  // 2-D accessor; rank must be 2.
  T& at(int64_t r, int64_t c) { return v_[static_cast<size_t>(r * dim(1) + c)]; }
  const T& at(int64_t r, int64_t c) const {
    return v_[static_cast<size_t>(r * dim(1) + c)];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T& x : v_)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  Tensor reshaped(Shape shape) const {
    check(shape_numel(shape) == size(),
          "reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
              " changes element count");
    return Tensor(std::move(shape), v_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(v_.size());
    for (size_t i = 0; i < v_.size(); ++i) out[i] = static_cast<U>(v_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

private:
  Shape shape_;
  std::vector<T> v_;
};

}  // namespace uss
