// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "crwkv/tensor.hpp"

namespace crwkv {

// Reverse-mode tape.  Ops append one closure per produced value; backward()
// walks the closures once, in reverse creation order, accumulating into
// per-value gradient slots.  Tensors refer to tape slots by (serial, id), so
// a tensor created under an old, destroyed tape is simply "not tracked"
// rather than a dangling pointer.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Register a leaf.  Its gradient slot is created immediately; grad()
  // returns zeros for leaves the loss never touched.
  void watch(Tensor& t);

  // Runs the reverse sweep from a scalar loss.  Single-shot: the tape is
  // consumed afterwards and only grad() reads are allowed.
  void backward(const Tensor& loss);

  Tensor grad(const Tensor& t) const;
  bool tracks(const Tensor& t) const;

  size_t node_count() const { return nodes_.size(); }
  uint64_t serial() const { return serial_; }
  bool consumed() const { return consumed_; }

  // --- op-layer interface -------------------------------------------------
  // Active tape for the current thread.  Ops record onto it only while it
  // is recording (not during its own backward sweep).
  static Tape* active();
  bool recording() const { return !consumed_ && !replaying_; }

  class Scope {
   public:
    explicit Scope(Tape& t);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  // Assigns a value slot to a freshly produced tensor.
  int32_t register_value(Tensor& t);
  int32_t id_of(const Tensor& t) const;
  void push_node(std::function<void(Tape&)> fn);

  // Gradient slots, for use inside node closures.
  const Tensor* grad_ptr(int32_t id) const;
  void accumulate(int32_t id, Tensor g);

 private:
  uint64_t serial_;
  std::vector<std::function<void(Tape&)>> nodes_;
  std::vector<Shape> value_shapes_;
  std::vector<Dtype> value_dtypes_;
  std::vector<Tensor> grads_;
  bool consumed_ = false;
  bool replaying_ = false;
};

}  // namespace crwkv
