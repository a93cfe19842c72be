// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#pragma once

#include "crwkv/ops.hpp"
#include "crwkv/wkv.hpp"

namespace crwkv {

// Parameter bundles for one RWKV block.  These hold plain tensors; the
// model keeps its parameters in a ParamStore and materializes these views
// per call (cheap: shared payloads).

struct LayerNormParams {
  Tensor gamma, beta;  // [d]
};

struct SpatialMixParams {
  Tensor mu_r, mu_k, mu_v;      // [d], clamped to [0,1] at use
  Tensor w_r, w_k, w_v, w_o;    // [d,d]
  wkv::WkvParams wkv;           // wkv.w holds the raw log-decay; exp() applied here
};

struct SeMixParams {
  Tensor reduce;  // [C,hidden]
  Tensor expand;  // [hidden,C]
};

struct MlpMixParams {
  Tensor w1;  // [d,4d]
  Tensor w2;  // [4d,d]
};

struct RwkvBlockParams {
  LayerNormParams ln1, ln2;
  SpatialMixParams spatial;
  SeMixParams se;
  MlpMixParams mlp;  // used instead of `se` when mlp_mix is set
  bool mlp_mix = false;
};

// Token-shift interpolation + r/k/v projections + bidirectional wkv +
// receptance gate + output projection.  x, shifted: [N,d] tokens.
Tensor spatial_mix(const Tensor& x, const Tensor& shifted,
                   const SpatialMixParams& p);

// Squeeze-and-excitation channel mixing on a [C,H,W] map: global average
// pool -> reduce -> relu -> expand -> sigmoid -> channel-wise rescale.
Tensor channel_mix_se(const Tensor& x, const SeMixParams& p);

// Squared-ReLU MLP on [N,d] tokens (ablation alternative to SE):
// (relu(x*W1))^2 * W2.
Tensor channel_mix_mlp(const Tensor& x, const MlpMixParams& p);

// Pre-norm residual block on a [C,H,W] map:
//   t   = tokens(x)
//   t  += spatial_mix(LN1(t), tokens(qshift(chw(LN1(t)))))
//   out = chw(t) + channel_mix(LN2-normalized branch)
Tensor rwkv_block(const Tensor& x, const RwkvBlockParams& p);

// Hidden width of the SE bottleneck for a given channel count.
int64_t se_hidden_width(int64_t channels);

}  // namespace crwkv
