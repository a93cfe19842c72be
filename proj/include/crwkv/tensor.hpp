// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "crwkv/common.hpp"
#include "crwkv/rng.hpp"

namespace crwkv {

class Tape;

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

// Reference-counted flat storage.  Allocation/free feed the memstat
// counters so peak working-set size can be reported per run.
struct Payload {
  Payload(Dtype dt, int64_t n);
  ~Payload();
  Payload(const Payload&) = delete;
  Payload& operator=(const Payload&) = delete;

  Dtype dtype;
  int64_t n;
  std::vector<float> f32;
  std::vector<double> f64;

  void* raw();
  const void* raw() const;
};

// Dense row-major tensor, f32 or f64.  Copy is shallow (shared payload);
// clone() deep-copies.  A tensor may carry a reference to the tape node
// that produced it (serial + slot id); see tape.hpp.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, Dtype dt = Dtype::F32);
  static Tensor full(Shape shape, double value, Dtype dt = Dtype::F32);
  static Tensor scalar(double value, Dtype dt = Dtype::F32);
  static Tensor from_f32(Shape shape, std::vector<float> data);
  static Tensor from_f64(Shape shape, std::vector<double> data);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi,
                        Dtype dt = Dtype::F32);

  bool defined() const { return payload_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int ndim() const { return int(shape_.size()); }
  int64_t dim(int i) const { return shape_[size_t(i)]; }
  int64_t numel() const;
  Dtype dtype() const { return dtype_; }

  template <typename T>
  std::span<const T> data() const;
  // Direct mutation; callers (optimizer, loaders) own the consequences for
  // anything already recorded on a tape.
  template <typename T>
  std::span<T> mutable_data();

  double item() const;          // requires numel()==1
  double at(int64_t flat) const;  // slow scalar read, any dtype
  void set(int64_t flat, double v);

  Tensor clone() const;
  Tensor astype(Dtype dt) const;
  // Payload-sharing reshape that drops tape linkage; graph-aware reshape
  // lives in ops.hpp.
  Tensor view(Shape shape) const;

  bool all_finite() const;

  // Tape linkage (managed by Tape and the op layer).
  uint64_t tape_serial() const { return tape_serial_; }
  int32_t tape_id() const { return tape_id_; }
  void set_tape_ref(uint64_t serial, int32_t id) {
    tape_serial_ = serial;
    tape_id_ = id;
  }

  const std::shared_ptr<Payload>& payload() const { return payload_; }

 private:
  Shape shape_;
  Dtype dtype_ = Dtype::F32;
  std::shared_ptr<Payload> payload_;
  uint64_t tape_serial_ = 0;
  int32_t tape_id_ = -1;
};

template <>
std::span<const float> Tensor::data<float>() const;
template <>
std::span<const double> Tensor::data<double>() const;
template <>
std::span<float> Tensor::mutable_data<float>();
template <>
std::span<double> Tensor::mutable_data<double>();

}  // namespace crwkv
