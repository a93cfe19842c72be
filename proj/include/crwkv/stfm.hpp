// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#pragma once

#include "crwkv/encoder.hpp"

namespace crwkv {

// ---------------------------------------------------------------------------
// SFM: multi-scale spatial fusion.  All four pyramid levels are upsampled to
// the stride-2 grid, concatenated, passed through one channel-mixing layer
// with a residual connection, then split and pooled back to native
// resolutions.
// ---------------------------------------------------------------------------
struct SfmLayout {
  int se_reduce = -1, se_expand = -1;
  int mlp_w1 = -1, mlp_w2 = -1;
};

SfmLayout build_sfm(ParamStore& store, const ModelConfig& cfg, Rng& rng,
                    Dtype dt);
FeaturePyramid spatial_fuse(const ParamStore& store, const SfmLayout& layout,
                            const ModelConfig& cfg, const FeaturePyramid& pyr);

// ---------------------------------------------------------------------------
// TFM: cross-temporal fusion via CBAM-style attention.  Channel gates are
// computed from each image's features and applied to the *other* image;
// spatial gates likewise.  Symmetric by construction.
// ---------------------------------------------------------------------------
struct CbamParams {
  Tensor mlp_reduce;  // [C,h]
  Tensor mlp_expand;  // [h,C]
  Tensor conv_w;      // [1,2,7,7]
  Tensor conv_b;      // [1]
};

// sigmoid(MLP(GAP(f)))  -> [C]
Tensor channel_attention(const Tensor& f, const CbamParams& p);
// sigmoid(Conv7x7([avgpool_c; maxpool_c]))  -> [1,h,w]
Tensor spatial_attention(const Tensor& f, const CbamParams& p);
// (fa' * s_b) + (fb' * s_a)  with fa' = fa * gamma_b, fb' = fb * gamma_a
Tensor temporal_fuse(const Tensor& fa, const Tensor& fb, const CbamParams& p);

// Baseline fusions for ablations.
Tensor fuse_siamdiff(const Tensor& fa, const Tensor& fb);
Tensor fuse_siamconc(const Tensor& fa, const Tensor& fb, const Tensor& proj_w,
                     const Tensor& proj_b);

struct TfmLayout {
  // One CBAM per pyramid scale (cross_cbam), or a 1x1 projection per scale
  // (siamconc); empty for siamdiff.
  std::array<int, 4> mlp_reduce{-1, -1, -1, -1};
  std::array<int, 4> mlp_expand{-1, -1, -1, -1};
  std::array<int, 4> conv_w{-1, -1, -1, -1};
  std::array<int, 4> conv_b{-1, -1, -1, -1};
  std::array<int, 4> proj_w{-1, -1, -1, -1};
  std::array<int, 4> proj_b{-1, -1, -1, -1};
};

TfmLayout build_tfm(ParamStore& store, const ModelConfig& cfg, Rng& rng,
                    Dtype dt);
FeaturePyramid temporal_fuse_pyramids(const ParamStore& store,
                                      const TfmLayout& layout,
                                      const ModelConfig& cfg,
                                      const FeaturePyramid& a,
                                      const FeaturePyramid& b);

}  // namespace crwkv
