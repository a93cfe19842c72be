// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#include "crwkv/stfm.hpp"

#include <cmath>
#include <numeric>

namespace crwkv {

namespace {

Tensor fan_in_uniform(Shape shape, int64_t fan_in, Rng& rng, Dtype dt) {
  double bound = 1.0 / std::sqrt(double(fan_in));
  return Tensor::uniform(std::move(shape), rng, -bound, bound, dt);
}

int64_t total_dims(const ModelConfig& cfg) {
  return std::accumulate(cfg.dims.begin(), cfg.dims.end(), int64_t{0});
}

}  // namespace

SfmLayout build_sfm(ParamStore& store, const ModelConfig& cfg, Rng& rng,
                    Dtype dt) {
  SfmLayout lay;
  int64_t c = total_dims(cfg);
  if (cfg.sfm_mlp_mix) {
    lay.mlp_w1 = store.add("sfm.mix.w1", fan_in_uniform({c, 4 * c}, c, rng, dt));
    lay.mlp_w2 =
        store.add("sfm.mix.w2", fan_in_uniform({4 * c, c}, 4 * c, rng, dt));
  } else {
    int64_t hidden = se_hidden_width(c);
    lay.se_reduce =
        store.add("sfm.mix.reduce", fan_in_uniform({c, hidden}, c, rng, dt));
    lay.se_expand = store.add("sfm.mix.expand",
                              fan_in_uniform({hidden, c}, hidden, rng, dt));
  }
  return lay;
}

FeaturePyramid spatial_fuse(const ParamStore& store, const SfmLayout& layout,
                            const ModelConfig& cfg, const FeaturePyramid& pyr) {
  int64_t h2 = pyr.f[0].dim(1), w2 = pyr.f[0].dim(2);
  std::vector<Tensor> ups;
  ups.push_back(pyr.f[0]);
  for (int j = 1; j < 4; ++j)
    ups.push_back(resample2d(pyr.f[size_t(j)], h2, w2, Resample::kBilinearUp));
  Tensor f = concat(ups, 0);
  Tensor mixed;
  if (cfg.sfm_mlp_mix) {
    MlpMixParams mp{store.at(layout.mlp_w1), store.at(layout.mlp_w2)};
    mixed = tokens_to_chw(channel_mix_mlp(chw_to_tokens(f), mp), h2, w2);
  } else {
    SeMixParams sp{store.at(layout.se_reduce), store.at(layout.se_expand)};
    mixed = channel_mix_se(f, sp);
  }
  Tensor fused = add(f, mixed);
  FeaturePyramid out;
  int64_t off = 0;
  for (int j = 0; j < 4; ++j) {
    Tensor part = slice(fused, 0, off, cfg.dims[size_t(j)]);
    off += cfg.dims[size_t(j)];
    int64_t th = pyr.f[size_t(j)].dim(1), tw = pyr.f[size_t(j)].dim(2);
    out.f[size_t(j)] = (th == h2 && tw == w2)
                           ? part
                           : resample2d(part, th, tw, Resample::kAvgPoolDown);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CBAM-style temporal fusion.
// ---------------------------------------------------------------------------
Tensor channel_attention(const Tensor& f, const CbamParams& p) {
  int64_t c = f.dim(0);
  Tensor g = reshape(reduce_mean(f, {1, 2}, false), {1, c});
  Tensor h = relu(matmul(g, p.mlp_reduce));
  return reshape(sigmoid(matmul(h, p.mlp_expand)), {c});
}

Tensor spatial_attention(const Tensor& f, const CbamParams& p) {
  Tensor avg = reduce_mean(f, {0}, true);
  Tensor mx = reduce_max(f, {0}, true);
  std::vector<Tensor> both{avg, mx};
  Tensor stacked = concat(both, 0);
  return sigmoid(conv2d(stacked, p.conv_w, p.conv_b, 1, 3));
}

Tensor temporal_fuse(const Tensor& fa, const Tensor& fb, const CbamParams& p) {
  int64_t c = fa.dim(0);
  Tensor ga = channel_attention(fa, p);
  Tensor gb = channel_attention(fb, p);
  // Cross application: each image is gated by the other's attention.
  Tensor fa2 = mul(fa, reshape(gb, {c, 1, 1}));
  Tensor fb2 = mul(fb, reshape(ga, {c, 1, 1}));
  Tensor sa = spatial_attention(fa2, p);
  Tensor sb = spatial_attention(fb2, p);
  return add(mul(fa2, sb), mul(fb2, sa));
}

Tensor fuse_siamdiff(const Tensor& fa, const Tensor& fb) {
  // |a-b| built from two relu halves so the op stays differentiable.
  return add(relu(sub(fa, fb)), relu(sub(fb, fa)));
}

Tensor fuse_siamconc(const Tensor& fa, const Tensor& fb, const Tensor& proj_w,
                     const Tensor& proj_b) {
  std::vector<Tensor> both{fa, fb};
  return conv2d(concat(both, 0), proj_w, proj_b, 1, 0);
}

TfmLayout build_tfm(ParamStore& store, const ModelConfig& cfg, Rng& rng,
                    Dtype dt) {
  TfmLayout lay;
  for (int j = 0; j < 4; ++j) {
    int64_t c = cfg.dims[size_t(j)];
    std::string pre = "tfm.scale" + std::to_string(j + 1) + ".";
    if (cfg.fusion == Fusion::kCrossCbam) {
      int64_t hidden = se_hidden_width(c);
      lay.mlp_reduce[size_t(j)] = store.add(
          pre + "mlp_reduce", fan_in_uniform({c, hidden}, c, rng, dt));
      lay.mlp_expand[size_t(j)] = store.add(
          pre + "mlp_expand", fan_in_uniform({hidden, c}, hidden, rng, dt));
      lay.conv_w[size_t(j)] = store.add(
          pre + "conv.w", fan_in_uniform({1, 2, 7, 7}, 2 * 49, rng, dt));
      lay.conv_b[size_t(j)] = store.add(pre + "conv.b", Tensor::zeros({1}, dt));
    } else if (cfg.fusion == Fusion::kSiamConc) {
      lay.proj_w[size_t(j)] = store.add(
          pre + "proj.w", fan_in_uniform({c, 2 * c, 1, 1}, 2 * c, rng, dt));
      lay.proj_b[size_t(j)] = store.add(pre + "proj.b", Tensor::zeros({c}, dt));
    }
  }
  return lay;
}

FeaturePyramid temporal_fuse_pyramids(const ParamStore& store,
                                      const TfmLayout& layout,
                                      const ModelConfig& cfg,
                                      const FeaturePyramid& a,
                                      const FeaturePyramid& b) {
  FeaturePyramid out;
  for (int j = 0; j < 4; ++j) {
    const Tensor& fa = a.f[size_t(j)];
    const Tensor& fb = b.f[size_t(j)];
    switch (cfg.fusion) {
      case Fusion::kCrossCbam: {
        CbamParams p{store.at(layout.mlp_reduce[size_t(j)]),
                     store.at(layout.mlp_expand[size_t(j)]),
                     store.at(layout.conv_w[size_t(j)]),
                     store.at(layout.conv_b[size_t(j)])};
        out.f[size_t(j)] = temporal_fuse(fa, fb, p);
        break;
      }
      case Fusion::kSiamDiff:
        out.f[size_t(j)] = fuse_siamdiff(fa, fb);
        break;
      case Fusion::kSiamConc:
        out.f[size_t(j)] = fuse_siamconc(fa, fb,
                                         store.at(layout.proj_w[size_t(j)]),
                                         store.at(layout.proj_b[size_t(j)]));
        break;
    }
  }
  return out;
}

}  // namespace crwkv
