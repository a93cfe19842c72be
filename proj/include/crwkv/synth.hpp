// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crwkv/tensor.hpp"

namespace crwkv {

// One synthetic bi-temporal pair with its exact change mask.  The mask is
// rasterized from the same shape set that painted the images, so it is
// correct by construction (not thresholded after the fact).
struct ChangeSample {
  Tensor a, b;   // [3,H,W] in [0,1]
  Tensor mask;   // [H,W] in {0,1}
  uint64_t seed = 0;
};

struct SynthOptions {
  int64_t height = 64, width = 64;
  // 0 = flat background, no noise; 1..3 add texture, noise and photometric
  // jitter between the two acquisitions.
  int difficulty = 1;
  int min_shapes = 3, max_shapes = 6;
  int min_changes = 1, max_changes = 3;
  // Test hooks.
  bool force_no_change = false;
  bool force_single_addition = false;
};

ChangeSample synth_sample(const SynthOptions& opt, uint64_t seed);
std::vector<ChangeSample> synth_generate(int count, const SynthOptions& opt,
                                         uint64_t seed);

// On-disk dataset layout: <dir>/NNNN_{a,b,mask}.png plus a manifest.
void write_dataset(const std::string& dir,
                   const std::vector<ChangeSample>& samples);
std::vector<ChangeSample> load_dataset(const std::string& dir);

}  // namespace crwkv
