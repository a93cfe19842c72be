// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#include "crwkv/tape.hpp"

#include <atomic>

#include "crwkv/ops.hpp"

namespace crwkv {

namespace {
std::atomic<uint64_t> g_next_serial{1};
thread_local Tape* g_active = nullptr;
}  // namespace

Tape::Tape() : serial_(g_next_serial.fetch_add(1)) {}
Tape::~Tape() {
  if (g_active == this) g_active = nullptr;
}

Tape* Tape::active() { return g_active; }

Tape::Scope::Scope(Tape& t) : prev_(g_active) { g_active = &t; }
Tape::Scope::~Scope() { g_active = prev_; }

int32_t Tape::register_value(Tensor& t) {
  int32_t id = int32_t(value_shapes_.size());
  value_shapes_.push_back(t.shape());
  value_dtypes_.push_back(t.dtype());
  grads_.emplace_back();
  t.set_tape_ref(serial_, id);
  return id;
}

int32_t Tape::id_of(const Tensor& t) const {
  return t.tape_serial() == serial_ ? t.tape_id() : -1;
}

bool Tape::tracks(const Tensor& t) const { return id_of(t) >= 0; }

void Tape::watch(Tensor& t) {
  if (!t.defined()) throw ShapeError("watch: undefined tensor");
  if (tracks(t)) return;
  register_value(t);
}

void Tape::push_node(std::function<void(Tape&)> fn) {
  nodes_.push_back(std::move(fn));
}

const Tensor* Tape::grad_ptr(int32_t id) const {
  if (id < 0 || size_t(id) >= grads_.size()) return nullptr;
  return grads_[size_t(id)].defined() ? &grads_[size_t(id)] : nullptr;
}

void Tape::accumulate(int32_t id, Tensor g) {
  if (id < 0 || size_t(id) >= grads_.size()) return;
  Tensor& slot = grads_[size_t(id)];
  if (!slot.defined()) {
    slot = std::move(g);
  } else {
    slot = add(slot, g);  // replay-safe: no recording during backward
  }
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw ShapeError("backward: tape already consumed");
  if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar");
  int32_t id = id_of(loss);
  if (id < 0)
    throw ShapeError("backward: loss is not tracked by this tape");
  replaying_ = true;
  grads_[size_t(id)] = Tensor::full(loss.shape(), 1.0, loss.dtype());
  // Reverse creation order; each node runs exactly once.
  for (size_t i = nodes_.size(); i-- > 0;) nodes_[i](*this);
  replaying_ = false;
  consumed_ = true;
}

Tensor Tape::grad(const Tensor& t) const {
  int32_t id = id_of(t);
  if (id < 0) throw ShapeError("grad: tensor is not tracked by this tape");
  if (!consumed_) throw ShapeError("grad: call backward first");
  const Tensor& g = grads_[size_t(id)];
  if (g.defined()) return g;
  return Tensor::zeros(value_shapes_[size_t(id)], value_dtypes_[size_t(id)]);
}

}  // namespace crwkv
