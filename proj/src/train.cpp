// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#include "crwkv/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "crwkv/io.hpp"

namespace crwkv {

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::publication(int steps_per_epoch) {
  if (steps_per_epoch <= 0)
    throw ConfigError("publication schedule needs steps_per_epoch > 0");
  TrainConfig c;
  c.lr = 1e-5;
  c.batch_size = 8;
  c.max_steps = 200 * steps_per_epoch;
  c.warmup_steps = 20 * steps_per_epoch;
  c.eval_every = steps_per_epoch;
  return c;
}

double lr_at_step(const TrainConfig& cfg, int step) {
  constexpr double kPi = 3.14159265358979323846;
  if (step < cfg.warmup_steps)
    return cfg.lr * double(step + 1) / double(cfg.warmup_steps);
  if (cfg.max_steps <= cfg.warmup_steps) return cfg.lr;
  double t = double(step - cfg.warmup_steps) /
             double(cfg.max_steps - cfg.warmup_steps);
  return cfg.lr * 0.5 * (1.0 + std::cos(kPi * std::clamp(t, 0.0, 1.0)));
}

namespace {

// Input-space flip augmentation (applied identically to both images and the
// mask).  Plain data transform; never recorded on a tape.
Tensor flip_xy(const Tensor& t, bool fx, bool fy) {
  if (!fx && !fy) return t;
  int nd = t.ndim();
  int64_t h = t.dim(nd - 2), w = t.dim(nd - 1);
  int64_t planes = t.numel() / (h * w);
  Tensor out = Tensor::zeros(t.shape(), t.dtype());
  for (int64_t c = 0; c < planes; ++c)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        int64_t sy = fy ? h - 1 - y : y;
        int64_t sx = fx ? w - 1 - x : x;
        out.set(c * h * w + y * w + x, t.at(c * h * w + sy * w + sx));
      }
  return out;
}

struct Adam {
  std::vector<std::vector<double>> m, v;

  explicit Adam(const ParamStore& params) {
    m.resize(params.size());
    v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m[i].assign(size_t(params.at(int(i)).numel()), 0.0);
      v[i].assign(size_t(params.at(int(i)).numel()), 0.0);
    }
  }
};

void validate(const TrainConfig& cfg, size_t train_n) {
  if (train_n == 0) throw ConfigError("train: empty training set");
  if (cfg.batch_size <= 0) throw ConfigError("train: batch_size must be > 0");
  if (cfg.max_steps <= 0) throw ConfigError("train: max_steps must be > 0");
  if (cfg.warmup_steps < 0) throw ConfigError("train: warmup_steps < 0");
  if (cfg.eval_every <= 0) throw ConfigError("train: eval_every must be > 0");
  if (!(cfg.lr > 0)) throw ConfigError("train: lr must be > 0");
  if (!(cfg.grad_clip > 0)) throw ConfigError("train: grad_clip must be > 0");
}

}  // namespace

Metrics evaluate(const ChangeDetector& model,
                 std::span<const ChangeSample> samples, double threshold) {
  ConfusionCounts total;
  for (const ChangeSample& s : samples)
    total += confusion(s.mask, model.forward(s.a, s.b), threshold);
  return metrics_from_counts(total);
}

TrainResult train_model(ChangeDetector& model, const TrainConfig& cfg,
                        std::span<const ChangeSample> train,
                        std::span<const ChangeSample> val,
                        const std::string& checkpoint_path) {
  validate(cfg, train.size());
  TrainResult res;
  Rng rng(cfg.seed);
  Adam opt(model.params);
  std::vector<Tensor> best;
  double best_iou = -1.0;

  for (int step = 0; step < cfg.max_steps; ++step) {
    double lr = lr_at_step(cfg, step);
    Tape tape;
    Tape::Scope scope(tape);
    model.params.watch_all(tape);

    Tensor loss;
    std::vector<int64_t> batch_ids;
    for (int b = 0; b < cfg.batch_size; ++b) {
      int64_t id = rng.uniform_int(int64_t(train.size()));
      batch_ids.push_back(id);
      const ChangeSample& s = train[size_t(id)];
      bool fx = cfg.augment_flips && rng.uniform() < 0.5;
      bool fy = cfg.augment_flips && rng.uniform() < 0.5;
      Tensor a = flip_xy(s.a, fx, fy);
      Tensor bb = flip_xy(s.b, fx, fy);
      Tensor m = flip_xy(s.mask, fx, fy);
      Tensor l = total_loss(m, model.forward(a, bb), cfg.lambda_dice);
      loss = b == 0 ? l : add(loss, l);
    }
    loss = mul_scalar(loss, 1.0 / double(cfg.batch_size));
    double lv = loss.item();
    if (!std::isfinite(lv)) {
      std::string ids;
      for (int64_t id : batch_ids) ids += std::to_string(id) + " ";
      throw NumericError("train: non-finite loss at step " +
                         std::to_string(step) + ", batch samples [ " + ids +
                         "]");
    }
    res.loss_history.push_back(lv);
    res.final_loss = lv;
    tape.backward(loss);

    // Global-norm clip over all parameter gradients.
    std::vector<Tensor> grads(model.params.size());
    double sq = 0.0;
    for (size_t i = 0; i < model.params.size(); ++i) {
      grads[i] = tape.grad(model.params.at(int(i)));
      int64_t n = grads[i].numel();
      for (int64_t j = 0; j < n; ++j) {
        double g = grads[i].at(j);
        sq += g * g;
      }
    }
    double norm = std::sqrt(sq);
    if (!std::isfinite(norm))
      throw NumericError("train: non-finite gradient at step " +
                         std::to_string(step));
    double scale = norm > cfg.grad_clip ? cfg.grad_clip / norm : 1.0;

    // Adam with decoupled-from-clip weight decay folded into the gradient.
    double t = double(step + 1);
    double bc1 = 1.0 - std::pow(cfg.beta1, t);
    double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (size_t i = 0; i < model.params.size(); ++i) {
      Tensor& theta = model.params.at(int(i));
      int64_t n = theta.numel();
      auto& mi = opt.m[i];
      auto& vi = opt.v[i];
      for (int64_t j = 0; j < n; ++j) {
        double g = grads[i].at(j) * scale +
                   cfg.weight_decay * theta.at(j);
        mi[size_t(j)] = cfg.beta1 * mi[size_t(j)] + (1.0 - cfg.beta1) * g;
        vi[size_t(j)] = cfg.beta2 * vi[size_t(j)] + (1.0 - cfg.beta2) * g * g;
        double stepv = lr * (mi[size_t(j)] / bc1) /
                       (std::sqrt(vi[size_t(j)] / bc2) + cfg.adam_eps);
        theta.set(j, theta.at(j) - stepv);
      }
    }

    bool last = step + 1 == cfg.max_steps;
    if (!val.empty() && ((step + 1) % cfg.eval_every == 0 || last)) {
      Metrics met = evaluate(model, val);
      if (met.iou > best_iou) {
        best_iou = met.iou;
        res.best_iou = met.iou;
        res.best_f1 = met.f1;
        res.best_step = step + 1;
        best.clear();
        for (const Tensor& p : model.params.values()) best.push_back(p.clone());
      }
      if (cfg.verbose)
        std::printf(
            "step %5d  loss %.4f  lr %.3e  val_iou %.4f  val_f1 %.4f  "
            "best %.4f\n",
            step + 1, lv, lr, met.iou, met.f1, best_iou);
    } else if (cfg.verbose && (step + 1) % 50 == 0) {
      std::printf("step %5d  loss %.4f  lr %.3e\n", step + 1, lv, lr);
    }
  }

  if (!best.empty())
    for (size_t i = 0; i < best.size(); ++i)
      model.params.at(int(i)) = best[i];
  if (!checkpoint_path.empty())
    io::save_checkpoint(checkpoint_path, model.params, model.cfg.to_kv());
  return res;
}

}  // namespace crwkv
