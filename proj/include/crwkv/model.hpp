// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#pragma once

#include "crwkv/objective.hpp"
#include "crwkv/stfm.hpp"

namespace crwkv {

// Lightweight U-Net style decoder: walk the fused pyramid coarse-to-fine
// (upsample x2, concat skip, two 3x3 conv + group-norm + relu), then a final
// x2 upsample and a 1x1 sigmoid head back at input resolution.
struct DecoderLevel {
  int conv1_w, conv1_b, gn1_g, gn1_b;
  int conv2_w, conv2_b, gn2_g, gn2_b;
};

struct DecoderLayout {
  std::array<DecoderLevel, 3> levels;  // 16->8, 8->4, 4->2 strides
  int head_w, head_b;                  // 1x1 conv after the last upsample
};

DecoderLayout build_decoder(ParamStore& store, const ModelConfig& cfg, Rng& rng,
                            Dtype dt);
Tensor decode(const ParamStore& store, const DecoderLayout& layout,
              const ModelConfig& cfg, const FeaturePyramid& fused);

// Full change-detection model: shared-weight encoder, SFM, temporal fusion,
// decoder.  forward() maps two [C,H,W] images to an [H,W] probability map.
struct ChangeDetector {
  ModelConfig cfg;
  Dtype dtype = Dtype::F32;
  ParamStore params;
  EncoderLayout encoder;
  SfmLayout sfm;
  TfmLayout tfm;
  DecoderLayout decoder;

  static ChangeDetector build(const ModelConfig& cfg, uint64_t seed,
                              Dtype dt = Dtype::F32);

  Tensor forward(const Tensor& a, const Tensor& b) const;
  FeaturePyramid encode_one(const Tensor& image) const;

  int64_t parameter_count() const { return params.total_elements(); }
};

// Number of channel groups used by decoder group-norm for a given width.
int norm_groups(int64_t channels);

}  // namespace crwkv
