// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#include "crwkv/model.hpp"

#include <cmath>

namespace crwkv {

int norm_groups(int64_t channels) {
  for (int g = 8; g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

namespace {

Tensor fan_in_uniform(Shape shape, int64_t fan_in, Rng& rng, Dtype dt) {
  double bound = 1.0 / std::sqrt(double(fan_in));
  return Tensor::uniform(std::move(shape), rng, -bound, bound, dt);
}

}  // namespace

DecoderLayout build_decoder(ParamStore& store, const ModelConfig& cfg, Rng& rng,
                            Dtype dt) {
  DecoderLayout lay{};
  int64_t cur = cfg.dims[3];
  for (int j = 0; j < 3; ++j) {
    int64_t skip = cfg.dims[size_t(2 - j)];
    int64_t cat = cur + skip;
    std::string pre = "decoder.level" + std::to_string(j + 1) + ".";
    DecoderLevel& lv = lay.levels[size_t(j)];
    lv.conv1_w =
        store.add(pre + "conv1.w", fan_in_uniform({skip, cat, 3, 3}, cat * 9,
                                                  rng, dt));
    lv.conv1_b = store.add(pre + "conv1.b", Tensor::zeros({skip}, dt));
    lv.gn1_g = store.add(pre + "gn1.gamma", Tensor::full({skip}, 1.0, dt));
    lv.gn1_b = store.add(pre + "gn1.beta", Tensor::zeros({skip}, dt));
    lv.conv2_w = store.add(
        pre + "conv2.w", fan_in_uniform({skip, skip, 3, 3}, skip * 9, rng, dt));
    lv.conv2_b = store.add(pre + "conv2.b", Tensor::zeros({skip}, dt));
    lv.gn2_g = store.add(pre + "gn2.gamma", Tensor::full({skip}, 1.0, dt));
    lv.gn2_b = store.add(pre + "gn2.beta", Tensor::zeros({skip}, dt));
    cur = skip;
  }
  lay.head_w = store.add("decoder.head.w",
                         fan_in_uniform({1, cfg.dims[0], 1, 1}, cfg.dims[0],
                                        rng, dt));
  lay.head_b = store.add("decoder.head.b", Tensor::zeros({1}, dt));
  return lay;
}

Tensor decode(const ParamStore& store, const DecoderLayout& layout,
              const ModelConfig& /*cfg*/, const FeaturePyramid& fused) {
  Tensor f = fused.f[3];
  for (int j = 0; j < 3; ++j) {
    const Tensor& skip = fused.f[size_t(2 - j)];
    int groups = norm_groups(skip.dim(0));
    const DecoderLevel& lv = layout.levels[size_t(j)];
    f = resample2d(f, skip.dim(1), skip.dim(2), Resample::kBilinearUp);
    std::vector<Tensor> both{f, skip};
    f = concat(both, 0);
    f = relu(group_norm(conv2d(f, store.at(lv.conv1_w), store.at(lv.conv1_b),
                               1, 1),
                        groups, store.at(lv.gn1_g), store.at(lv.gn1_b)));
    f = relu(group_norm(conv2d(f, store.at(lv.conv2_w), store.at(lv.conv2_b),
                               1, 1),
                        groups, store.at(lv.gn2_g), store.at(lv.gn2_b)));
  }
  int64_t h = f.dim(1) * 2, w = f.dim(2) * 2;
  f = resample2d(f, h, w, Resample::kBilinearUp);
  Tensor prob =
      sigmoid(conv2d(f, store.at(layout.head_w), store.at(layout.head_b), 1,
                     0));
  return reshape(prob, {h, w});
}

ChangeDetector ChangeDetector::build(const ModelConfig& cfg, uint64_t seed,
                                     Dtype dt) {
  ChangeDetector m;
  m.cfg = cfg;
  m.dtype = dt;
  Rng rng(seed);
  m.encoder = build_encoder(m.params, cfg, rng, dt);
  if (cfg.use_sfm) m.sfm = build_sfm(m.params, cfg, rng, dt);
  m.tfm = build_tfm(m.params, cfg, rng, dt);
  m.decoder = build_decoder(m.params, cfg, rng, dt);
  return m;
}

FeaturePyramid ChangeDetector::encode_one(const Tensor& image) const {
  FeaturePyramid pyr = encode(params, encoder, cfg, image);
  if (cfg.use_sfm) pyr = spatial_fuse(params, sfm, cfg, pyr);
  return pyr;
}

Tensor ChangeDetector::forward(const Tensor& a, const Tensor& b) const {
  if (!same_shape(a.shape(), b.shape()))
    throw ShapeError("forward: image shapes differ: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  FeaturePyramid pa = encode_one(a);
  FeaturePyramid pb = encode_one(b);
  FeaturePyramid fused = temporal_fuse_pyramids(params, tfm, cfg, pa, pb);
  return decode(params, decoder, cfg, fused);
}

// ---------------------------------------------------------------------------
// Exact parameter count: build a scratch store and measure it.
// ---------------------------------------------------------------------------
int64_t count_parameters(const ModelConfig& cfg, bool full_model) {
  ParamStore store;
  Rng rng(0);
  build_encoder(store, cfg, rng, Dtype::F32);
  if (full_model) {
    if (cfg.use_sfm) build_sfm(store, cfg, rng, Dtype::F32);
    build_tfm(store, cfg, rng, Dtype::F32);
    build_decoder(store, cfg, rng, Dtype::F32);
  }
  return store.total_elements();
}

// ---------------------------------------------------------------------------
// Analytic forward cost at [h,w], both temporal branches included.
// Multiply-accumulates are charged 2 FLOPs; cheap elementwise work (norms,
// gates, shifts, residuals) at small flat per-element rates.  The intent is
// a faithful order-of-magnitude budget whose scaling matches the kernels,
// not an exact retrace of every instruction.
// ---------------------------------------------------------------------------
namespace {

uint64_t ln_flops(uint64_t n, uint64_t d) { return 8 * n * d; }

uint64_t block_flops(const ModelConfig& cfg, uint64_t n, uint64_t d,
                     bool mlp_mix) {
  uint64_t f = 0;
  f += 2 * ln_flops(n, d);              // two layer norms
  f += n * d;                           // qshift copy pass
  f += 3 * 4 * n * d;                   // three token-shift interpolations
  f += 4 * 2 * n * d * d;               // r/k/v/o projections
  f += wkv::ops_per_cell_bidirectional() * n * d;
  f += 3 * n * d;                       // receptance gate
  f += 2 * n * d;                       // residual adds
  if (mlp_mix) {
    f += 2 * 2 * n * d * (4 * d);       // two MLP matmuls
    f += 2 * n * 4 * d;                 // relu + square
  } else {
    uint64_t hid = uint64_t(se_hidden_width(int64_t(d)));
    f += n * d;                         // global average pool
    f += 4 * d * hid;                   // squeeze/excite matmuls
    f += n * d;                         // channel rescale
  }
  (void)cfg;
  return f;
}

uint64_t conv_flops(uint64_t co, uint64_t oh, uint64_t ow, uint64_t ci,
                    uint64_t k) {
  return 2 * co * oh * ow * ci * k * k + co * oh * ow;
}

}  // namespace

uint64_t count_flops(const ModelConfig& cfg, int64_t h, int64_t w) {
  if (h % 16 != 0 || w % 16 != 0)
    throw ShapeError("count_flops: resolution must be divisible by 16");
  std::array<uint64_t, 4> hh, ww, dd;
  for (int i = 0; i < 4; ++i) {
    hh[size_t(i)] = uint64_t(h >> (i + 1));
    ww[size_t(i)] = uint64_t(w >> (i + 1));
    dd[size_t(i)] = uint64_t(cfg.dims[size_t(i)]);
  }
  uint64_t n2 = hh[0] * ww[0];
  uint64_t ctot = dd[0] + dd[1] + dd[2] + dd[3];

  // Encoder (one branch).
  uint64_t enc = conv_flops(dd[0], hh[0], ww[0], uint64_t(cfg.in_channels), 3);
  for (int i = 0; i < 4; ++i) {
    uint64_t n = hh[size_t(i)] * ww[size_t(i)];
    enc += uint64_t(cfg.depths[size_t(i)]) *
           block_flops(cfg, n, dd[size_t(i)], cfg.block_mlp_mix);
    if (i < 3)
      enc += conv_flops(dd[size_t(i) + 1], hh[size_t(i) + 1],
                        ww[size_t(i) + 1], dd[size_t(i)], 3);
  }

  // SFM (one branch).
  uint64_t sfm = 0;
  if (cfg.use_sfm) {
    for (int j = 1; j < 4; ++j) sfm += 8 * dd[size_t(j)] * n2;  // upsample
    if (cfg.sfm_mlp_mix) {
      sfm += 2 * 2 * n2 * ctot * (4 * ctot) + 2 * n2 * 4 * ctot;
    } else {
      uint64_t hid = uint64_t(se_hidden_width(int64_t(ctot)));
      sfm += n2 * ctot + 4 * ctot * hid + n2 * ctot;
    }
    sfm += n2 * ctot;                                   // residual
    for (int j = 1; j < 4; ++j) sfm += 2 * dd[size_t(j)] * n2;  // pool back
  }

  // Temporal fusion.
  uint64_t tfm = 0;
  for (int j = 0; j < 4; ++j) {
    uint64_t n = hh[size_t(j)] * ww[size_t(j)];
    uint64_t d = dd[size_t(j)];
    switch (cfg.fusion) {
      case Fusion::kCrossCbam: {
        uint64_t hid = uint64_t(se_hidden_width(int64_t(d)));
        tfm += 2 * (n * d + 4 * d * hid);      // channel attention x2
        tfm += 2 * n * d;                      // cross channel gating
        tfm += 2 * (2 * n * d + conv_flops(1, n, 1, 2, 7) + n);  // spatial x2
        tfm += 3 * n;                          // cross spatial merge
        break;
      }
      case Fusion::kSiamDiff:
        tfm += 4 * n * d;
        break;
      case Fusion::kSiamConc:
        tfm += conv_flops(d, n, 1, 2 * d, 1);
        break;
    }
  }

  // Decoder.
  uint64_t dec = 0;
  uint64_t cur = dd[3];
  for (int j = 0; j < 3; ++j) {
    uint64_t skip = dd[size_t(2 - j)];
    uint64_t n = hh[size_t(2 - j)] * ww[size_t(2 - j)];
    dec += 8 * cur * n;                                  // upsample
    dec += conv_flops(skip, hh[size_t(2 - j)], ww[size_t(2 - j)], cur + skip, 3);
    dec += conv_flops(skip, hh[size_t(2 - j)], ww[size_t(2 - j)], skip, 3);
    dec += 2 * 10 * skip * n;                            // two GN + relu
    cur = skip;
  }
  uint64_t nf = uint64_t(h) * uint64_t(w);
  dec += 8 * dd[0] * nf;                                 // final upsample
  dec += conv_flops(1, uint64_t(h), uint64_t(w), dd[0], 1) + nf;  // head

  return 2 * (enc + sfm) + tfm + dec;
}

}  // namespace crwkv
