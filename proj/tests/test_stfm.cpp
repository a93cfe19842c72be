// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
//
// Spatial fusion geometry and the cross-temporal attention module,
// including the argument-order symmetry the detector head relies on.
#include <cmath>
#include <cstring>

#include "crwkv/stfm.hpp"
#include "doctest.h"

using namespace crwkv;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype() || a.numel() != b.numel()) return false;
  size_t bytes = size_t(a.numel()) * dtype_size(a.dtype());
  const void* pa = a.dtype() == Dtype::F32
                       ? static_cast<const void*>(a.data<float>().data())
                       : static_cast<const void*>(a.data<double>().data());
  const void* pb = b.dtype() == Dtype::F32
                       ? static_cast<const void*>(b.data<float>().data())
                       : static_cast<const void*>(b.data<double>().data());
  return std::memcmp(pa, pb, bytes) == 0;
}

FeaturePyramid random_pyramid(Rng& rng, const ModelConfig& cfg, int64_t h,
                              int64_t w) {
  FeaturePyramid pyr;
  for (int i = 0; i < 4; ++i) {
    int64_t s = 2LL << i;
    pyr.f[size_t(i)] = Tensor::uniform({cfg.dims[size_t(i)], h / s, w / s},
                                       rng, -1.0, 1.0, Dtype::F32);
  }
  return pyr;
}

CbamParams random_cbam(Rng& rng, int64_t c, Dtype dt) {
  CbamParams p;
  int64_t hid = se_hidden_width(c);
  p.mlp_reduce = Tensor::uniform({c, hid}, rng, -0.5, 0.5, dt);
  p.mlp_expand = Tensor::uniform({hid, c}, rng, -0.5, 0.5, dt);
  p.conv_w = Tensor::uniform({1, 2, 7, 7}, rng, -0.2, 0.2, dt);
  p.conv_b = Tensor::uniform({1}, rng, -0.1, 0.1, dt);
  return p;
}

}  // namespace

TEST_CASE("spatial fusion preserves every level's geometry") {
  ModelConfig cfg = ModelConfig::variant_named("nano");
  ParamStore store;
  Rng rng(300);
  SfmLayout layout = build_sfm(store, cfg, rng, Dtype::F32);
  FeaturePyramid pyr = random_pyramid(rng, cfg, 64, 32);
  FeaturePyramid fused = spatial_fuse(store, layout, cfg, pyr);
  for (int i = 0; i < 4; ++i) {
    REQUIRE(fused.f[size_t(i)].shape() == pyr.f[size_t(i)].shape());
    CHECK(fused.f[size_t(i)].all_finite());
    // Cross-scale mixing actually happened.
    CHECK_FALSE(bitwise_equal(fused.f[size_t(i)], pyr.f[size_t(i)]));
  }
}

TEST_CASE("spatial fusion with a zeroed mixer reduces to cross-scale blur") {
  // With the channel mixer gating everything at 1/2 (zero SE weights), the
  // residual makes each fused level 1.5x its upsample/downsample round trip.
  // At the finest level that round trip is the identity, so fused = 1.5 * f0.
  ModelConfig cfg = ModelConfig::variant_named("nano");
  ParamStore store;
  Rng rng(301);
  SfmLayout layout = build_sfm(store, cfg, rng, Dtype::F32);
  for (auto& t : store.values()) t = Tensor::zeros(t.shape(), t.dtype());
  FeaturePyramid pyr = random_pyramid(rng, cfg, 32, 32);
  FeaturePyramid fused = spatial_fuse(store, layout, cfg, pyr);
  const Tensor& f0 = pyr.f[0];
  const Tensor& g0 = fused.f[0];
  for (int64_t i = 0; i < f0.numel(); ++i)
    CHECK(g0.at(i) == doctest::Approx(1.5 * f0.at(i)).epsilon(1e-5));
}

TEST_CASE("channel attention produces one sigmoid gate per channel") {
  Rng rng(302);
  int64_t c = 12;
  CbamParams p = random_cbam(rng, c, Dtype::F32);
  Tensor f = Tensor::uniform({c, 8, 8}, rng, -1.0, 1.0, Dtype::F32);
  Tensor g = channel_attention(f, p);
  REQUIRE(g.numel() == c);
  for (int64_t i = 0; i < c; ++i) {
    CHECK(g.at(i) > 0.0);
    CHECK(g.at(i) < 1.0);
  }
}

TEST_CASE("spatial attention reacts to the location of channel energy") {
  Rng rng(303);
  int64_t c = 4;
  CbamParams p = random_cbam(rng, c, Dtype::F64);
  Tensor f = Tensor::zeros({c, 16, 16}, Dtype::F64);
  // Hot square in the upper-left corner.
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < 4; ++y)
      for (int64_t x = 0; x < 4; ++x) f.set(ch * 256 + y * 16 + x, 3.0);
  Tensor s = spatial_attention(f, p);
  REQUIRE(s.shape() == std::vector<int64_t>{1, 16, 16});
  // Gates differ between the hot corner and the far corner.
  CHECK(std::abs(s.at(0) - s.at(255)) > 1e-6);
  for (int64_t i = 0; i < s.numel(); ++i) {
    CHECK(s.at(i) > 0.0);
    CHECK(s.at(i) < 1.0);
  }
}

TEST_CASE("temporal fusion is bitwise symmetric in its arguments") {
  Rng rng(304);
  for (int trial = 0; trial < 5; ++trial) {
    int64_t c = 8;
    CbamParams p = random_cbam(rng, c, Dtype::F32);
    Tensor fa = Tensor::uniform({c, 12, 10}, rng, -1.0, 1.0, Dtype::F32);
    Tensor fb = Tensor::uniform({c, 12, 10}, rng, -1.0, 1.0, Dtype::F32);
    CHECK(bitwise_equal(temporal_fuse(fa, fb, p), temporal_fuse(fb, fa, p)));
  }
}

TEST_CASE("siamdiff is the elementwise absolute difference") {
  Tensor a = Tensor::from_f64({1, 2, 2}, {1.0, -2.0, 0.5, 3.0});
  Tensor b = Tensor::from_f64({1, 2, 2}, {4.0, -2.0, 1.5, -1.0});
  Tensor d = fuse_siamdiff(a, b);
  CHECK(d.at(0) == doctest::Approx(3.0));
  CHECK(d.at(1) == doctest::Approx(0.0));
  CHECK(d.at(2) == doctest::Approx(1.0));
  CHECK(d.at(3) == doctest::Approx(4.0));
  CHECK(bitwise_equal(fuse_siamdiff(a, b), fuse_siamdiff(b, a)));
}

TEST_CASE("siamconc projects the stacked pair back to the input width") {
  Rng rng(305);
  int64_t c = 6;
  Tensor a = Tensor::uniform({c, 4, 4}, rng, -1.0, 1.0, Dtype::F32);
  Tensor b = Tensor::uniform({c, 4, 4}, rng, -1.0, 1.0, Dtype::F32);
  Tensor w = Tensor::uniform({c, 2 * c, 1, 1}, rng, -0.5, 0.5, Dtype::F32);
  Tensor bias = Tensor::zeros({c}, Dtype::F32);
  Tensor y = fuse_siamconc(a, b, w, bias);
  REQUIRE(y.shape() == a.shape());
  // Order matters for concatenation: not symmetric in general.
  CHECK_FALSE(bitwise_equal(y, fuse_siamconc(b, a, w, bias)));
}

TEST_CASE("pyramid-level fusion dispatches per configured strategy") {
  Rng rng(306);
  for (Fusion fusion :
       {Fusion::kCrossCbam, Fusion::kSiamDiff, Fusion::kSiamConc}) {
    ModelConfig cfg = ModelConfig::variant_named("nano");
    cfg.fusion = fusion;
    ParamStore store;
    TfmLayout layout = build_tfm(store, cfg, rng, Dtype::F32);
    if (fusion == Fusion::kSiamDiff) CHECK(store.size() == 0);
    FeaturePyramid a = random_pyramid(rng, cfg, 32, 32);
    FeaturePyramid b = random_pyramid(rng, cfg, 32, 32);
    FeaturePyramid fused = temporal_fuse_pyramids(store, layout, cfg, a, b);
    for (int i = 0; i < 4; ++i) {
      REQUIRE(fused.f[size_t(i)].shape() == a.f[size_t(i)].shape());
      CHECK(fused.f[size_t(i)].all_finite());
    }
    if (fusion != Fusion::kSiamConc) {
      FeaturePyramid swapped = temporal_fuse_pyramids(store, layout, cfg, b, a);
      for (int i = 0; i < 4; ++i)
        CHECK(bitwise_equal(fused.f[size_t(i)], swapped.f[size_t(i)]));
    }
  }
}
