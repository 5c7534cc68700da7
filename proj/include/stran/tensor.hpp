// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace stran {

enum class DType { F32, F64 };

const char* dtype_name(DType dt);

/// NCHW extents. Every dimension is at least 1.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by every operation whose operands have incompatible extents. The
/// message names both shapes.
class ShapeError : public Error {
 public:
  ShapeError(const std::string& what, const Shape& a, const Shape& b);
  ShapeError(const std::string& what, const Shape& a);
  const Shape& lhs() const { return lhs_; }
  const Shape& rhs() const { return rhs_; }

 private:
  Shape lhs_;
  Shape rhs_;
};

/// Dense NCHW array with shared, contiguous storage.
///
/// Copies share the buffer. Kernels only write into tensors they have just
/// created, so a tensor is effectively immutable once handed to a caller and
/// may be read from several threads at once. Use clone() for a private copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, DType dtype);  // zero-filled

  static Tensor zeros(Shape shape, DType dtype = DType::F32);
  static Tensor full(Shape shape, double value, DType dtype = DType::F32);
  static Tensor from(Shape shape, std::span<const double> values,
                     DType dtype = DType::F32);
  static Tensor from(Shape shape, std::initializer_list<double> values,
                     DType dtype = DType::F32);
  static Tensor scalar(double value, DType dtype = DType::F32);

  bool defined() const { return static_cast<bool>(storage_); }
  const Shape& shape() const { return shape_; }
  DType dtype() const { return dtype_; }
  std::size_t numel() const { return shape_.numel(); }

  template <typename T>
  std::span<T> data();
  template <typename T>
  std::span<const T> data() const;

  double at(std::size_t i) const;
  double at(int n, int c, int h, int w) const;
  /// Writes one element. Only for tensors the caller owns exclusively.
  void set(std::size_t i, double v);

  double item() const;  // requires numel() == 1
  std::vector<double> to_vector() const;

  Tensor clone() const;
  Tensor to(DType dtype) const;
  Tensor reshape(Shape shape) const;  // shares storage

 private:
  using Buffer = std::variant<std::vector<float>, std::vector<double>>;
  Shape shape_{};
  DType dtype_ = DType::F32;
  std::shared_ptr<Buffer> storage_;
};

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() {
  return DType::F32;
}
template <>
constexpr DType dtype_of<double>() {
  return DType::F64;
}

/// Calls `fn.template operator()<T>()` with T matching `dt`.
template <typename Fn>
decltype(auto) dispatch(DType dt, Fn&& fn) {
  if (dt == DType::F32) return fn.template operator()<float>();
  return fn.template operator()<double>();
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b);
void check_same_dtype(const char* op, const Tensor& a, const Tensor& b);

/// Largest absolute elementwise difference; shapes must agree.
double max_abs_diff(const Tensor& a, const Tensor& b);
bool bit_equal(const Tensor& a, const Tensor& b);

}  // namespace stran
