// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#pragma once

#include <span>
#include <string>
#include <vector>

#include "crwkv/model.hpp"
#include "crwkv/synth.hpp"

namespace crwkv {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double grad_clip = 0.5;       // global-norm threshold
  double lambda_dice = 1.0;
  int batch_size = 4;
  int max_steps = 2000;         // total optimizer steps
  int warmup_steps = 100;       // linear warmup, then cosine decay
  int eval_every = 200;
  uint64_t seed = 0;
  bool augment_flips = false;
  bool verbose = true;

  // Defaults above are desk-scale.  publication() restores the original
  // large-scale schedule (lr 1e-5, 200 epochs with 20 warmup epochs over
  // batches of 8); not practical on one CPU but kept selectable.
  static TrainConfig desk();
  static TrainConfig publication(int steps_per_epoch);
};

// Piecewise schedule: linear warmup to `lr`, then cosine decay to zero at
// max_steps.  Exposed for direct testing.
double lr_at_step(const TrainConfig& cfg, int step);

struct TrainResult {
  double best_iou = 0.0;
  double best_f1 = 0.0;
  int best_step = -1;
  double final_loss = 0.0;
  std::vector<double> loss_history;  // one entry per step
};

// Adam + weight decay + global-norm clipping over the model's ParamStore.
// Evaluates on `val` every eval_every steps, keeps the best-IoU weights in
// the model on return.  If checkpoint_path is non-empty the best weights are
// also saved there.  Throws NumericError on a non-finite loss.
TrainResult train_model(ChangeDetector& model, const TrainConfig& cfg,
                        std::span<const ChangeSample> train,
                        std::span<const ChangeSample> val,
                        const std::string& checkpoint_path = "");

// Mean-confusion evaluation over a set of samples at a fixed threshold.
Metrics evaluate(const ChangeDetector& model,
                 std::span<const ChangeSample> samples,
                 double threshold = 0.5);

}  // namespace crwkv
