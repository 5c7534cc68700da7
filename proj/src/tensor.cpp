// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

#include "stran/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace stran {

const char* dtype_name(DType dt) { return dt == DType::F32 ? "f32" : "f64"; }

std::string Shape::str() const {
  std::ostringstream os;
  os << '[' << n << 'x' << c << 'x' << h << 'x' << w << ']';
  return os.str();
}

ShapeError::ShapeError(const std::string& what, const Shape& a, const Shape& b)
    : Error(what + ": " + a.str() + " vs " + b.str()), lhs_(a), rhs_(b) {}

ShapeError::ShapeError(const std::string& what, const Shape& a)
    : Error(what + ": " + a.str()), lhs_(a), rhs_(a) {}

namespace {

void validate(const Shape& s) {
  if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
    throw ShapeError("tensor dimensions must be >= 1", s);
}

}  // namespace

Tensor::Tensor(Shape shape, DType dtype) : shape_(shape), dtype_(dtype) {
  validate(shape);
  if (dtype == DType::F32)
    storage_ = std::make_shared<Buffer>(std::vector<float>(shape.numel(), 0.0f));
  else
    storage_ = std::make_shared<Buffer>(std::vector<double>(shape.numel(), 0.0));
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return Tensor(shape, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t(shape, dtype);
  dispatch(dtype, [&]<typename T>() {
    auto d = t.data<T>();
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::from(Shape shape, std::span<const double> values, DType dtype) {
  if (values.size() != shape.numel())
    throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape",
                     shape);
  Tensor t(shape, dtype);
  dispatch(dtype, [&]<typename T>() {
    auto d = t.data<T>();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values,
                    DType dtype) {
  return from(shape, std::span<const double>(values.begin(), values.size()),
              dtype);
}

Tensor Tensor::scalar(double value, DType dtype) {
  return full(Shape{}, value, dtype);
}

template <typename T>
std::span<T> Tensor::data() {
  if (!storage_) throw Error("access to an undefined tensor");
  if (dtype_ != dtype_of<T>())
    throw Error(std::string("tensor dtype is ") + dtype_name(dtype_));
  auto& v = std::get<std::vector<T>>(*storage_);
  return {v.data(), v.size()};
}

template <typename T>
std::span<const T> Tensor::data() const {
  if (!storage_) throw Error("access to an undefined tensor");
  if (dtype_ != dtype_of<T>())
    throw Error(std::string("tensor dtype is ") + dtype_name(dtype_));
  const auto& v = std::get<std::vector<T>>(*storage_);
  return {v.data(), v.size()};
}

template std::span<float> Tensor::data<float>();
template std::span<double> Tensor::data<double>();
template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;

double Tensor::at(std::size_t i) const {
  return dispatch(dtype_, [&]<typename T>() -> double {
    return static_cast<double>(data<T>()[i]);
  });
}

double Tensor::at(int n, int c, int h, int w) const {
  const std::size_t i =
      ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w +
      w;
  return at(i);
}

void Tensor::set(std::size_t i, double v) {
  dispatch(dtype_, [&]<typename T>() { data<T>()[i] = static_cast<T>(v); });
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() needs a single element", shape_);
  return at(0);
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(numel());
  dispatch(dtype_, [&]<typename T>() {
    auto d = data<T>();
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = d[i];
  });
  return out;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  t.dtype_ = dtype_;
  if (storage_) t.storage_ = std::make_shared<Buffer>(*storage_);
  return t;
}

Tensor Tensor::to(DType dtype) const {
  if (dtype == dtype_) return *this;
  Tensor t(shape_, dtype);
  dispatch(dtype_, [&]<typename S>() {
    dispatch(dtype, [&]<typename D>() {
      auto src = data<S>();
      auto dst = t.data<D>();
      for (std::size_t i = 0; i < src.size(); ++i)
        dst[i] = static_cast<D>(src[i]);
    });
  });
  return t;
}

Tensor Tensor::reshape(Shape shape) const {
  validate(shape);
  if (shape.numel() != numel())
    throw ShapeError("reshape changes element count", shape_, shape);
  Tensor t = *this;
  t.shape_ = shape;
  return t;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch", a.shape(),
                     b.shape());
}

void check_same_dtype(const char* op, const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype())
    throw Error(std::string(op) + ": dtype mismatch (" + dtype_name(a.dtype()) +
                " vs " + dtype_name(b.dtype()) + ")");
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  check_same_shape("max_abs_diff", a, b);
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
  return dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    return std::memcmp(x.data(), y.data(), x.size() * sizeof(T)) == 0;
  });
}

}  // namespace stran

#include "stran/hash.hpp"

namespace stran {

std::uint64_t tensor_hash(const Tensor& t, std::uint64_t state) {
  const int dims[4] = {t.shape().n, t.shape().c, t.shape().h, t.shape().w};
  state = fnv1a64(std::as_bytes(std::span<const int>(dims)), state);
  state = fnv1a64(dtype_name(t.dtype()), state);
  return dispatch(t.dtype(), [&]<typename T>() {
    return fnv1a64(std::as_bytes(t.data<T>()), state);
  });
}

}  // namespace stran
