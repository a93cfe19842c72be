// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#include "crwkv/tensor.hpp"

#include <cmath>
#include <sstream>

namespace crwkv {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

Payload::Payload(Dtype dt, int64_t count) : dtype(dt), n(count) {
  if (dt == Dtype::F32) {
    f32.assign(size_t(n), 0.0f);
  } else if (dt == Dtype::F64) {
    f64.assign(size_t(n), 0.0);
  } else {
    throw ShapeError("tensor payloads are f32/f64 only");
  }
  memstat::on_alloc(n * int64_t(dtype_size(dt)));
}

Payload::~Payload() { memstat::on_free(n * int64_t(dtype_size(dtype))); }

void* Payload::raw() {
  return dtype == Dtype::F32 ? static_cast<void*>(f32.data())
                             : static_cast<void*>(f64.data());
}
const void* Payload::raw() const {
  return dtype == Dtype::F32 ? static_cast<const void*>(f32.data())
                             : static_cast<const void*>(f64.data());
}

namespace {
void check_shape(const Shape& s) {
  for (int64_t d : s) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_str(s));
  }
}
}  // namespace

Tensor Tensor::zeros(Shape shape, Dtype dt) {
  check_shape(shape);
  Tensor t;
  t.shape_ = std::move(shape);
  t.dtype_ = dt;
  t.payload_ = std::make_shared<Payload>(dt, shape_numel(t.shape_));
  return t;
}

Tensor Tensor::full(Shape shape, double value, Dtype dt) {
  Tensor t = zeros(std::move(shape), dt);
  if (dt == Dtype::F32) {
    for (auto& v : t.payload_->f32) v = float(value);
  } else {
    for (auto& v : t.payload_->f64) v = value;
  }
  return t;
}

Tensor Tensor::scalar(double value, Dtype dt) { return full({1}, value, dt); }

Tensor Tensor::from_f32(Shape shape, std::vector<float> data) {
  if (shape_numel(shape) != int64_t(data.size()))
    throw ShapeError("from_f32: " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  Tensor t = zeros(std::move(shape), Dtype::F32);
  t.payload_->f32 = std::move(data);
  return t;
}

Tensor Tensor::from_f64(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != int64_t(data.size()))
    throw ShapeError("from_f64: shape/data mismatch");
  Tensor t = zeros(std::move(shape), Dtype::F64);
  t.payload_->f64 = std::move(data);
  return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, Dtype dt) {
  Tensor t = zeros(std::move(shape), dt);
  int64_t n = t.numel();
  if (dt == Dtype::F32) {
    auto d = t.mutable_data<float>();
    for (int64_t i = 0; i < n; ++i) d[size_t(i)] = float(rng.uniform(lo, hi));
  } else {
    auto d = t.mutable_data<double>();
    for (int64_t i = 0; i < n; ++i) d[size_t(i)] = rng.uniform(lo, hi);
  }
  return t;
}

int64_t Tensor::numel() const { return payload_ ? payload_->n : 0; }

template <>
std::span<const float> Tensor::data<float>() const {
  if (!payload_ || dtype_ != Dtype::F32)
    throw ShapeError("tensor is not f32");
  return {payload_->f32.data(), payload_->f32.size()};
}
template <>
std::span<const double> Tensor::data<double>() const {
  if (!payload_ || dtype_ != Dtype::F64)
    throw ShapeError("tensor is not f64");
  return {payload_->f64.data(), payload_->f64.size()};
}
template <>
std::span<float> Tensor::mutable_data<float>() {
  if (!payload_ || dtype_ != Dtype::F32)
    throw ShapeError("tensor is not f32");
  return {payload_->f32.data(), payload_->f32.size()};
}
template <>
std::span<double> Tensor::mutable_data<double>() {
  if (!payload_ || dtype_ != Dtype::F64)
    throw ShapeError("tensor is not f64");
  return {payload_->f64.data(), payload_->f64.size()};
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape_));
  return at(0);
}

double Tensor::at(int64_t flat) const {
  if (!payload_ || flat < 0 || flat >= numel())
    throw ShapeError("at(): index out of range");
  return dtype_ == Dtype::F32 ? double(payload_->f32[size_t(flat)])
                              : payload_->f64[size_t(flat)];
}

void Tensor::set(int64_t flat, double v) {
  if (!payload_ || flat < 0 || flat >= numel())
    throw ShapeError("set(): index out of range");
  if (dtype_ == Dtype::F32)
    payload_->f32[size_t(flat)] = float(v);
  else
    payload_->f64[size_t(flat)] = v;
}

Tensor Tensor::clone() const {
  if (!payload_) return {};
  Tensor t = zeros(shape_, dtype_);
  if (dtype_ == Dtype::F32)
    t.payload_->f32 = payload_->f32;
  else
    t.payload_->f64 = payload_->f64;
  return t;
}

Tensor Tensor::astype(Dtype dt) const {
  if (!payload_) return {};
  if (dt == dtype_) return clone();
  Tensor t = zeros(shape_, dt);
  int64_t n = numel();
  for (int64_t i = 0; i < n; ++i) t.set(i, at(i));
  return t;
}

Tensor Tensor::view(Shape shape) const {
  if (shape_numel(shape) != numel())
    throw ShapeError("view: cannot reshape " + shape_str(shape_) + " to " +
                     shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.dtype_ = dtype_;
  t.payload_ = payload_;
  return t;
}

bool Tensor::all_finite() const {
  if (!payload_) return true;
  if (dtype_ == Dtype::F32) {
    for (float v : payload_->f32)
      if (!std::isfinite(v)) return false;
  } else {
    for (double v : payload_->f64)
      if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace crwkv
