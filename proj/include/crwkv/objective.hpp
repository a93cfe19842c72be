// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#pragma once

#include <cstdint>

#include "crwkv/ops.hpp"

namespace crwkv {

// truth: binary {0,1} map; pred: probabilities in (0,1).  Both same shape.
// BCE clamps predictions to [delta, 1-delta], delta = 1e-7.
Tensor bce_loss(const Tensor& truth, const Tensor& pred);

// Soft Dice: 1 - (2*sum(t*p) + eps) / (sum(t) + sum(p) + eps), eps = 1.0.
Tensor dice_loss(const Tensor& truth, const Tensor& pred, double eps = 1.0);

// bce + lambda * dice
Tensor total_loss(const Tensor& truth, const Tensor& pred, double lambda = 1.0);

struct ConfusionCounts {
  int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  ConfusionCounts& operator+=(const ConfusionCounts& o);
};

// Predicted positive iff prob > threshold.
ConfusionCounts confusion(const Tensor& truth, const Tensor& pred,
                          double threshold = 0.5);

struct Metrics {
  double precision = 0, recall = 0, f1 = 0, iou = 0;
};

// Degenerate denominators yield 0, not NaN.
Metrics metrics_from_counts(const ConfusionCounts& c);

}  // namespace crwkv
