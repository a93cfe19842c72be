// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#include "crwkv/blocks.hpp"

#include <algorithm>

namespace crwkv {

int64_t se_hidden_width(int64_t channels) {
  return std::max<int64_t>((channels + 3) / 4, 8);
}

Tensor spatial_mix(const Tensor& x, const Tensor& shifted,
                   const SpatialMixParams& p) {
  Dtype dt = x.dtype();
  Tensor one = Tensor::scalar(1.0, dt);
  auto interp = [&](const Tensor& mu_raw) {
    Tensor mu = clamp(mu_raw, 0.0, 1.0);
    return add(mul(mu, x), mul(sub(one, mu), shifted));
  };
  Tensor r = matmul(interp(p.mu_r), p.w_r);
  Tensor k = matmul(interp(p.mu_k), p.w_k);
  Tensor v = matmul(interp(p.mu_v), p.w_v);
  wkv::WkvParams eff{exp(p.wkv.w), p.wkv.u};
  Tensor y = wkv::bidirectional(k, v, eff);
  return matmul(mul(sigmoid(r), y), p.w_o);
}

Tensor channel_mix_se(const Tensor& x, const SeMixParams& p) {
  int64_t c = x.dim(0);
  Tensor g = reshape(reduce_mean(x, {1, 2}, false), {1, c});
  Tensor h = relu(matmul(g, p.reduce));
  Tensor s = sigmoid(matmul(h, p.expand));
  return mul(x, reshape(s, {c, 1, 1}));
}

Tensor channel_mix_mlp(const Tensor& x, const MlpMixParams& p) {
  return matmul(square(relu(matmul(x, p.w1))), p.w2);
}

Tensor rwkv_block(const Tensor& x, const RwkvBlockParams& p) {
  int64_t h = x.dim(1), w = x.dim(2);
  Tensor t = chw_to_tokens(x);
  Tensor tn = layer_norm(t, p.ln1.gamma, p.ln1.beta);
  Tensor shifted = chw_to_tokens(qshift(tokens_to_chw(tn, h, w)));
  Tensor mixed = add(t, spatial_mix(tn, shifted, p.spatial));
  Tensor mn = layer_norm(mixed, p.ln2.gamma, p.ln2.beta);
  Tensor branch =
      p.mlp_mix ? channel_mix_mlp(mn, p.mlp)
                : chw_to_tokens(channel_mix_se(tokens_to_chw(mn, h, w), p.se));
  return tokens_to_chw(add(mixed, branch), h, w);
}

}  // namespace crwkv
