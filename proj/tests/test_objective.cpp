// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
//
// Loss identities, gradients, and the confusion-matrix metric algebra.
#include <cmath>

#include "crwkv/objective.hpp"
#include "doctest.h"
#include "grad_check.hpp"

using namespace crwkv;

TEST_CASE("bce of a coin-flip prediction is ln 2") {
  Rng rng(400);
  Tensor truth = Tensor::zeros({5, 7}, Dtype::F64);
  for (int64_t i = 0; i < truth.numel(); ++i)
    truth.set(i, rng.uniform() < 0.4 ? 1.0 : 0.0);
  Tensor half = Tensor::full({5, 7}, 0.5, Dtype::F64);
  CHECK(bce_loss(truth, half).at(0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("bce matches a direct elementwise evaluation") {
  Rng rng(401);
  Tensor truth = Tensor::zeros({40}, Dtype::F64);
  for (int64_t i = 0; i < 40; ++i)
    truth.set(i, rng.uniform() < 0.5 ? 1.0 : 0.0);
  Tensor pred = Tensor::uniform({40}, rng, 0.02, 0.98, Dtype::F64);
  double want = 0;
  for (int64_t i = 0; i < 40; ++i) {
    double t = truth.at(i), p = pred.at(i);
    want += -(t * std::log(p) + (1 - t) * std::log(1 - p));
  }
  want /= 40;
  CHECK(bce_loss(truth, pred).at(0) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("bce clamp keeps saturated predictions finite") {
  Tensor truth = Tensor::from_f64({2}, {1.0, 0.0});
  Tensor pred = Tensor::from_f64({2}, {0.0, 1.0});  // worst case
  Tensor l = bce_loss(truth, pred);
  CHECK(l.all_finite());
  CHECK(l.at(0) == doctest::Approx(-std::log(1e-7)).epsilon(1e-6));
}

TEST_CASE("dice loss is exactly 0 for perfect masks, including all-empty") {
  Tensor empty_t = Tensor::zeros({8, 8}, Dtype::F32);
  Tensor empty_p = Tensor::zeros({8, 8}, Dtype::F32);
  CHECK(dice_loss(empty_t, empty_p).at(0) == 0.0);

  Tensor t = Tensor::zeros({8, 8}, Dtype::F32);
  for (int64_t i = 0; i < 16; ++i) t.set(i, 1.0);
  CHECK(dice_loss(t, t).at(0) == 0.0);
  Tensor ones = Tensor::full({8, 8}, 1.0, Dtype::F32);
  CHECK(dice_loss(ones, ones).at(0) == 0.0);
}

TEST_CASE("dice loss penalizes disjoint masks") {
  Tensor t = Tensor::zeros({10}, Dtype::F64);
  Tensor p = Tensor::zeros({10}, Dtype::F64);
  for (int64_t i = 0; i < 5; ++i) t.set(i, 1.0);
  for (int64_t i = 5; i < 10; ++i) p.set(i, 1.0);
  // 1 - (0 + 1) / (5 + 5 + 1)
  CHECK(dice_loss(t, p).at(0) == doctest::Approx(1.0 - 1.0 / 11).epsilon(1e-12));
}

TEST_CASE("total loss is bce plus lambda times dice") {
  Rng rng(402);
  Tensor t = Tensor::zeros({6, 6}, Dtype::F64);
  for (int64_t i = 0; i < t.numel(); ++i)
    t.set(i, rng.uniform() < 0.3 ? 1.0 : 0.0);
  Tensor p = Tensor::uniform({6, 6}, rng, 0.05, 0.95, Dtype::F64);
  for (double lambda : {0.25, 1.0, 2.0}) {
    double want = bce_loss(t, p).at(0) + lambda * dice_loss(t, p).at(0);
    CHECK(total_loss(t, p, lambda).at(0) ==
          doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("loss gradients agree with finite differences") {
  Rng rng(403);
  Tensor t = Tensor::zeros({4, 4}, Dtype::F64);
  for (int64_t i = 0; i < t.numel(); ++i)
    t.set(i, rng.uniform() < 0.5 ? 1.0 : 0.0);
  Tensor p = Tensor::uniform({4, 4}, rng, 0.1, 0.9, Dtype::F64);
  auto rep = crwkv::testing::grad_check(
      {p}, [&](const std::vector<Tensor>& in) { return total_loss(t, in[0]); });
  INFO(rep.worst);
  CHECK(rep.max_rel <= 1e-8);
}

TEST_CASE("confusion counts use strict > on the threshold") {
  Tensor truth = Tensor::from_f64({4}, {1.0, 1.0, 0.0, 0.0});
  Tensor pred = Tensor::from_f64({4}, {0.5, 0.7, 0.5, 0.2});
  ConfusionCounts c = confusion(truth, pred, 0.5);
  CHECK(c.tp == 1);  // 0.7 > 0.5
  CHECK(c.fn == 1);  // 0.5 is NOT positive
  CHECK(c.tn == 2);
  CHECK(c.fp == 0);
}

TEST_CASE("metrics are 0 (not NaN) on degenerate confusion counts") {
  Metrics m = metrics_from_counts(ConfusionCounts{});
  CHECK(m.precision == 0.0);
  CHECK(m.recall == 0.0);
  CHECK(m.f1 == 0.0);
  CHECK(m.iou == 0.0);
  Metrics tn_only = metrics_from_counts(ConfusionCounts{0, 0, 0, 50});
  CHECK(tn_only.f1 == 0.0);
}

TEST_CASE("f1 equals 2*iou/(1+iou) on random confusion sets") {
  Rng rng(404);
  for (int trial = 0; trial < 100; ++trial) {
    ConfusionCounts c;
    c.tp = 1 + int64_t(rng.uniform_int(500));
    c.fp = int64_t(rng.uniform_int(500));
    c.fn = int64_t(rng.uniform_int(500));
    c.tn = int64_t(rng.uniform_int(500));
    Metrics m = metrics_from_counts(c);
    CHECK(m.f1 == doctest::Approx(2 * m.iou / (1 + m.iou)).epsilon(1e-12));
    double p = double(c.tp) / double(c.tp + c.fp);
    double r = double(c.tp) / double(c.tp + c.fn);
    CHECK(m.precision == doctest::Approx(p));
    CHECK(m.recall == doctest::Approx(r));
    CHECK(m.iou ==
          doctest::Approx(double(c.tp) / double(c.tp + c.fp + c.fn)));
  }
}

TEST_CASE("confusion accumulates across batches") {
  Tensor t1 = Tensor::from_f64({2}, {1.0, 0.0});
  Tensor p1 = Tensor::from_f64({2}, {0.9, 0.1});
  Tensor t2 = Tensor::from_f64({2}, {1.0, 0.0});
  Tensor p2 = Tensor::from_f64({2}, {0.2, 0.8});
  ConfusionCounts c = confusion(t1, p1);
  c += confusion(t2, p2);
  CHECK(c.tp == 1);
  CHECK(c.tn == 1);
  CHECK(c.fn == 1);
  CHECK(c.fp == 1);
}
