// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#pragma once

#include <string>

#include "crwkv/model.hpp"

namespace crwkv {

// Sliding-window inference with overlapping tiles; per-pixel probabilities
// are averaged across overlaps.  tile must be divisible by 16 (pyramid
// stride).  overlap is the margin shared by adjacent tiles.  Inputs smaller
// than one tile are padded by reflection and cropped back.
Tensor tiled_inference(const ChangeDetector& model, const Tensor& a,
                       const Tensor& b, int64_t tile, int64_t overlap);

// TP white, TN black, FP green, FN red -> [3,H,W].
Tensor render_overlay(const Tensor& truth, const Tensor& pred,
                      double threshold = 0.5);

// Rebuilds a ChangeDetector from a checkpoint pack (embedded config decides
// the architecture; every named parameter must match its built shape).
ChangeDetector load_model(const std::string& checkpoint_path);

}  // namespace crwkv
