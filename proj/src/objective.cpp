// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#include "crwkv/objective.hpp"

namespace crwkv {

namespace {
constexpr double kBceDelta = 1e-7;

void check_pair(const Tensor& truth, const Tensor& pred, const char* what) {
  if (!same_shape(truth.shape(), pred.shape()))
    throw ShapeError(std::string(what) + ": truth " + shape_str(truth.shape()) +
                     " vs pred " + shape_str(pred.shape()));
}
}  // namespace

Tensor bce_loss(const Tensor& truth, const Tensor& pred) {
  check_pair(truth, pred, "bce_loss");
  Tensor one = Tensor::scalar(1.0, pred.dtype());
  Tensor p = clamp(pred, kBceDelta, 1.0 - kBceDelta);
  Tensor pos = mul(truth, log(p));
  Tensor neg_ = mul(sub(one, truth), log(sub(one, p)));
  return reduce_mean(neg(add(pos, neg_)), {});
}

Tensor dice_loss(const Tensor& truth, const Tensor& pred, double eps) {
  check_pair(truth, pred, "dice_loss");
  Tensor inter = reduce_sum(mul(truth, pred), {});
  Tensor mass = add(reduce_sum(truth, {}), reduce_sum(pred, {}));
  Tensor num = add_scalar(mul_scalar(inter, 2.0), eps);
  Tensor den = add_scalar(mass, eps);
  return sub(Tensor::scalar(1.0, pred.dtype()), div(num, den));
}

Tensor total_loss(const Tensor& truth, const Tensor& pred, double lambda) {
  return add(bce_loss(truth, pred), mul_scalar(dice_loss(truth, pred), lambda));
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  return *this;
}

ConfusionCounts confusion(const Tensor& truth, const Tensor& pred,
                          double threshold) {
  check_pair(truth, pred, "confusion");
  ConfusionCounts c;
  int64_t n = truth.numel();
  for (int64_t i = 0; i < n; ++i) {
    bool t = truth.at(i) > 0.5;
    bool p = pred.at(i) > threshold;
    if (t && p)
      ++c.tp;
    else if (!t && p)
      ++c.fp;
    else if (t && !p)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

Metrics metrics_from_counts(const ConfusionCounts& c) {
  Metrics m;
  double tp = double(c.tp);
  if (c.tp + c.fp > 0) m.precision = tp / double(c.tp + c.fp);
  if (c.tp + c.fn > 0) m.recall = tp / double(c.tp + c.fn);
  if (m.precision + m.recall > 0)
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  if (c.tp + c.fp + c.fn > 0) m.iou = tp / double(c.tp + c.fp + c.fn);
  return m;
}

}  // namespace crwkv
