// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#pragma once

#include <span>
#include <vector>

#include "crwkv/tape.hpp"
#include "crwkv/tensor.hpp"

namespace crwkv {

// Differentiable op layer.  Every function here runs a plain CPU kernel,
// bumps the op counter, and (when a tape is recording and an input is
// tracked) appends a backward closure.  Elementwise binaries broadcast on
// trailing dimensions, numpy style.

Shape broadcast_shape(const Shape& a, const Shape& b);

// -- elementwise binaries --
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// -- elementwise unaries --
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor neg(const Tensor& x);
Tensor max_with_const(const Tensor& x, double c);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);

// -- reductions (axes may be empty = all axes) --
Tensor reduce_sum(const Tensor& x, std::vector<int> axes, bool keepdims = false);
Tensor reduce_mean(const Tensor& x, std::vector<int> axes, bool keepdims = false);
// Ties take the first (lowest flat index) element.
Tensor reduce_max(const Tensor& x, std::vector<int> axes, bool keepdims = false);

// -- linear algebra --
// a:[M,K] b:[K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& x);

// -- structural --
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len);

// -- image ops (inputs are [C,H,W]; weights [Cout,Cin,kh,kw]) --
// Odd square kernels; pad must be 0 or (k-1)/2.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int pad);

enum class Resample { kBilinearUp, kAvgPoolDown, kNearestUp };
// Integer scale factors only.  Bilinear uses half-pixel centers with edge
// clamping, so constant maps stay constant.
Tensor resample2d(const Tensor& x, int64_t out_h, int64_t out_w, Resample mode);

// Quad-directional token shift: channels in four contiguous quarters are
// replaced by their left / right / up / down neighbor (zero at borders).
// The last quarter absorbs any channel remainder.
Tensor qshift(const Tensor& x);

// -- normalization (composed from primitives above) --
// tokens x:[N,d], gamma/beta:[d]
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
// x:[C,H,W], gamma/beta:[C]; stats per channel group
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma,
                  const Tensor& beta, double eps = 1e-5);

// [C,H,W] <-> [H*W, C] token layout (row-major spatial order)
Tensor chw_to_tokens(const Tensor& x);
Tensor tokens_to_chw(const Tensor& x, int64_t h, int64_t w);

// Non-recording helper: reduce g by summation until it matches `target`
// (exact reverse of trailing-dim broadcast).  Used inside backward closures.
Tensor sum_to(const Tensor& g, const Shape& target);

}  // namespace crwkv
