// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#pragma once

#include <array>
#include <map>
#include <string>

#include "crwkv/blocks.hpp"
#include "crwkv/params.hpp"

namespace crwkv {

enum class Fusion { kCrossCbam, kSiamDiff, kSiamConc };

const char* fusion_name(Fusion f);
Fusion fusion_from_name(const std::string& s);

struct ModelConfig {
  std::string variant = "T";
  std::array<int64_t, 4> dims{32, 48, 96, 160};
  std::array<int, 4> depths{2, 2, 4, 2};
  int64_t in_channels = 3;
  Fusion fusion = Fusion::kCrossCbam;
  // Ablation switches.
  bool block_mlp_mix = false;  // swap SE channel mixing for the MLP form
  bool sfm_mlp_mix = false;    // same swap inside the spatial fusion module
  bool use_sfm = true;

  static ModelConfig variant_named(const std::string& name);  // T | S | B | nano
  std::string to_kv() const;
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
};

// Per-block parameter indices into a ParamStore.
struct BlockLayout {
  int ln1_g, ln1_b, ln2_g, ln2_b;
  int mu_r, mu_k, mu_v;
  int w_r, w_k, w_v, w_o;
  int decay, bonus;
  // SE form
  int se_reduce = -1, se_expand = -1;
  // MLP form
  int mlp_w1 = -1, mlp_w2 = -1;
};

struct EncoderLayout {
  int stem_w, stem_b;
  std::array<std::vector<BlockLayout>, 4> stages;
  std::array<int, 3> down_w, down_b;
};

struct FeaturePyramid {
  std::array<Tensor, 4> f;  // strides 2, 4, 8, 16 relative to the input
};

// Parameter construction (seeded) and the shared-weight forward pass.
EncoderLayout build_encoder(ParamStore& store, const ModelConfig& cfg, Rng& rng,
                            Dtype dt);
FeaturePyramid encode(const ParamStore& store, const EncoderLayout& layout,
                      const ModelConfig& cfg, const Tensor& image);

RwkvBlockParams block_params(const ParamStore& store, const BlockLayout& b,
                             bool mlp_mix);

// Exact trainable-parameter count for a config (encoder only or the full
// change-detection model) and the analytic forward cost in FLOPs
// (1 multiply-accumulate = 2 FLOPs) at a given input resolution.
int64_t count_parameters(const ModelConfig& cfg, bool full_model);
uint64_t count_flops(const ModelConfig& cfg, int64_t h, int64_t w);

}  // namespace crwkv
