// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#pragma once

#include "crwkv/tensor.hpp"

namespace crwkv::wkv {

// Per-channel attention parameters.  `w` is the effective decay exponent
// (weights fall off as e^{-dist*w}); callers that train a decay store it in
// log space and apply exp() before invoking the kernels.  `u` is the bonus
// applied to the current token.
struct WkvParams {
  Tensor w;  // [d]
  Tensor u;  // [d]
};

// Reference evaluator: materializes every pairwise weight, O(T^2 d).
// Causal if `bidirectional` is false.  Log-sum-exp stabilized but entirely
// independent of the streaming implementations below; used as the oracle.
Tensor naive(const Tensor& k, const Tensor& v, const WkvParams& p,
             bool bidirectional);

// Streaming causal form, O(T d).  Registered as a single tape node.
Tensor recurrent(const Tensor& k, const Tensor& v, const WkvParams& p);

// Bidirectional form used by the vision blocks: every position attends to
// all others with weight e^{-(|t-i|-1)w + k_i}, plus the e^{u+k_t} self term.
// Two stabilized sweeps (suffix precompute + forward merge), O(T d).
Tensor bidirectional(const Tensor& k, const Tensor& v, const WkvParams& p);

struct WkvGrads {
  Tensor k, v, w, u;
};

// Exact reverse-mode gradients of the streaming forms, O(T d).  Gradients
// are with respect to the effective decay w (chain through any
// reparameterization at the call site).
WkvGrads backward_recurrent(const Tensor& k, const Tensor& v,
                            const WkvParams& p, const Tensor& grad_out);
WkvGrads backward_bidirectional(const Tensor& k, const Tensor& v,
                                const WkvParams& p, const Tensor& grad_out);

// Cost-model constants: arithmetic ops charged per (token, channel) by the
// instrumented counter.  Kept in sync with the kernel inner loops.
uint64_t ops_per_cell_recurrent();
uint64_t ops_per_cell_bidirectional();
uint64_t ops_per_pair_naive();  // per (t, i, channel) pair

}  // namespace crwkv::wkv
