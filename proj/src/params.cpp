// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#include "crwkv/params.hpp"

namespace crwkv {

int ParamStore::add(std::string name, Tensor value) {
  if (find(name) >= 0) throw ConfigError("duplicate parameter: " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return int(values_.size()) - 1;
}

int ParamStore::find(std::string_view name) const {
  for (size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return int(i);
  return -1;
}

int64_t ParamStore::total_elements() const {
  int64_t n = 0;
  for (const auto& v : values_) n += v.numel();
  return n;
}

void ParamStore::watch_all(Tape& tape) {
  for (auto& v : values_) tape.watch(v);
}

}  // namespace crwkv
