// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
//
// Finite-difference gradient checking.  The function under test is evaluated
// twice: analytically (tape backward, at the inputs' native dtype) and via
// central differences computed entirely in f64, so the reference itself is
// not the bottleneck when the inputs are f32.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "crwkv/ops.hpp"
#include "crwkv/tape.hpp"

namespace crwkv::testing {

// Maps a list of leaf tensors to a scalar tensor.  Must be pure and
// dtype-generic (the op layer dispatches on input dtype).
using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckReport {
  double max_rel = 0.0;
  std::string worst;  // "input 2 flat 17: analytic ... fd ..."
  int probes = 0;
};

inline double rel_diff(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Probes every element when probes_per_input <= 0, otherwise a seeded random
// subset (for big parameter sets).
inline GradCheckReport grad_check(const std::vector<Tensor>& inputs,
                                  const ScalarFn& fn, double eps = 1e-6,
                                  int probes_per_input = 0,
                                  uint64_t probe_seed = 99) {
  GradCheckReport rep;

  // Analytic pass at native dtype.
  std::vector<Tensor> tracked;
  tracked.reserve(inputs.size());
  for (const Tensor& t : inputs) tracked.push_back(t.clone());
  std::vector<Tensor> grads;
  {
    Tape tape;
    Tape::Scope scope(tape);
    for (Tensor& t : tracked) tape.watch(t);
    Tensor loss = fn(tracked);
    if (loss.numel() != 1) throw ShapeError("grad_check: fn must be scalar");
    tape.backward(loss);
    for (Tensor& t : tracked) grads.push_back(tape.grad(t));
  }

  // FD reference in f64.
  std::vector<Tensor> base;
  base.reserve(inputs.size());
  for (const Tensor& t : inputs) base.push_back(t.astype(Dtype::F64));
  Rng rng(probe_seed);
  for (size_t i = 0; i < base.size(); ++i) {
    int64_t n = base[i].numel();
    std::vector<int64_t> picks;
    if (probes_per_input <= 0 || probes_per_input >= n) {
      picks.resize(size_t(n));
      for (int64_t j = 0; j < n; ++j) picks[size_t(j)] = j;
    } else {
      for (int p = 0; p < probes_per_input; ++p)
        picks.push_back(rng.uniform_int(n));
    }
    for (int64_t j : picks) {
      double saved = base[i].at(j);
      base[i].set(j, saved + eps);
      double lp = fn(base).item();
      base[i].set(j, saved - eps);
      double lm = fn(base).item();
      base[i].set(j, saved);
      double fd = (lp - lm) / (2.0 * eps);
      double an = grads[i].at(j);
      double rel = rel_diff(fd, an);
      ++rep.probes;
      if (rel > rep.max_rel) {
        rep.max_rel = rel;
        rep.worst = "input " + std::to_string(i) + " flat " +
                    std::to_string(j) + ": analytic " + std::to_string(an) +
                    " vs fd " + std::to_string(fd);
      }
    }
  }
  return rep;
}

}  // namespace crwkv::testing
