// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "crwkv/tape.hpp"
#include "crwkv/tensor.hpp"

namespace crwkv {

// Flat named parameter registry.  Layout structs hold indices into it, so
// checkpoints can address every tensor by a stable dotted name.
class ParamStore {
 public:
  int add(std::string name, Tensor value);
  int find(std::string_view name) const;  // -1 if absent

  Tensor& at(int idx) { return values_[size_t(idx)]; }
  const Tensor& at(int idx) const { return values_[size_t(idx)]; }
  const std::string& name(int idx) const { return names_[size_t(idx)]; }

  size_t size() const { return values_.size(); }
  int64_t total_elements() const;

  void watch_all(Tape& tape);

  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor>& values() { return values_; }
  const std::vector<Tensor>& values() const { return values_; }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

}  // namespace crwkv
