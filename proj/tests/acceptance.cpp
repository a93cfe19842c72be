// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
//
// Acceptance gate — one test per release claim, one pass/fail line each.
//
//   1. streaming WKV == pairwise reference (forward, causal)
//   2. bidirectional WKV == pairwise reference + reversal equivariance
//   3. gradient suite: every differentiable op + end-to-end model vs FD
//   4. counted-op scaling: linear kernels, quadratic reference, full model
//   5. parameter/FLOP accounting vs the reference budgets
//   6. temporal symmetry of the detector
//   7. loss analytics
//   8. desk-scale training recovery (median of 3 seeds)
//   9. fusion ablation report (informational)
//  10. round-trip and determinism guarantees
//
// The two training tests dominate the runtime: six 2000-step runs, around
// twenty minutes on one core.  Everything else finishes in about a minute.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "crwkv/bench.hpp"
#include "crwkv/infer.hpp"
#include "crwkv/io.hpp"
#include "crwkv/train.hpp"
#include "crwkv/wkv.hpp"
#include "grad_check.hpp"

using namespace crwkv;

namespace {

int g_tests_run = 0;
int g_tests_passed = 0;
const char* g_filter = nullptr;  // substring filter from argv[1]

#define RUN_TEST(fn)                                                      \
  do {                                                                    \
    if (g_filter && !std::strstr(#fn, g_filter)) break;                  \
    ++g_tests_run;                                                        \
    bool ok = false;                                                      \
    try {                                                                 \
      ok = fn();                                                          \
    } catch (const std::exception& e) {                                   \
      std::printf("  unexpected exception: %s\n", e.what());              \
    }                                                                     \
    std::printf("[ %s ] %s\n", ok ? "      OK" : "  FAILED", #fn);        \
    if (ok) ++g_tests_passed;                                             \
  } while (0)

bool ExpectLe(const char* what, double value, double bound) {
  if (value <= bound) return true;
  std::printf("  EXPECT %s <= %.3e, got %.6e\n", what, bound, value);
  return false;
}

bool ExpectNear(const char* what, double got, double want, double tol) {
  if (std::abs(got - want) <= tol) return true;
  std::printf("  EXPECT %s == %.12g +- %.1e, got %.12g\n", what, want, tol,
              got);
  return false;
}

bool ExpectTrue(const char* what, bool cond) {
  if (cond) return true;
  std::printf("  EXPECT %s\n", what);
  return false;
}

bool ExpectInWindow(const char* what, double value, double lo, double hi) {
  if (value >= lo && value <= hi) return true;
  std::printf("  EXPECT %s in [%.4g, %.4g], got %.6g\n", what, lo, hi, value);
  return false;
}

double SecondsSince(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

bool BitwiseEqual(const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype() || a.numel() != b.numel()) return false;
  size_t bytes = size_t(a.numel()) * dtype_size(a.dtype());
  const void* pa = a.dtype() == Dtype::F32
                       ? static_cast<const void*>(a.data<float>().data())
                       : static_cast<const void*>(a.data<double>().data());
  const void* pb = b.dtype() == Dtype::F32
                       ? static_cast<const void*>(b.data<float>().data())
                       : static_cast<const void*>(b.data<double>().data());
  return std::memcmp(pa, pb, bytes) == 0;
}

double MaxRel(const Tensor& got, const Tensor& want) {
  double worst = 0;
  for (int64_t i = 0; i < got.numel(); ++i) {
    double g = got.at(i), w = want.at(i);
    worst = std::max(worst, std::abs(g - w) / std::max(1.0, std::abs(w)));
  }
  return worst;
}

struct WkvCase {
  Tensor k, v;
  wkv::WkvParams p;
};

WkvCase RandomWkvCase(Rng& rng, int64_t t, int64_t d, Dtype dt) {
  WkvCase c;
  c.k = Tensor::uniform({t, d}, rng, -2.0, 2.0, dt);
  c.v = Tensor::uniform({t, d}, rng, -3.0, 3.0, dt);
  c.p.w = Tensor::uniform({d}, rng, 0.05, 1.5, dt);
  c.p.u = Tensor::uniform({d}, rng, -1.0, 1.0, dt);
  return c;
}

Tensor ReverseRows(const Tensor& x) {
  int64_t t = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  for (int64_t i = 0; i < t; ++i)
    for (int64_t j = 0; j < d; ++j)
      out.set((t - 1 - i) * d + j, x.at(i * d + j));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// 1. Streaming causal WKV equals the pairwise reference.
//    100 random cases per dtype, T <= 64, d <= 16, under 5 seconds.
// ---------------------------------------------------------------------------
bool TestWkvOracleEquivalence() {
  auto t0 = std::chrono::steady_clock::now();
  Rng rng(0xACC'0001);
  bool ok = true;
  double worst32 = 0, worst64 = 0;
  for (int trial = 0; trial < 100; ++trial) {
    int64_t t = 1 + rng.uniform_int(64);
    int64_t d = 1 + rng.uniform_int(16);
    WkvCase c64 = RandomWkvCase(rng, t, d, Dtype::F64);
    worst64 = std::max(worst64, MaxRel(wkv::recurrent(c64.k, c64.v, c64.p),
                                       wkv::naive(c64.k, c64.v, c64.p, false)));
    WkvCase c32 = RandomWkvCase(rng, t, d, Dtype::F32);
    worst32 = std::max(worst32, MaxRel(wkv::recurrent(c32.k, c32.v, c32.p),
                                       wkv::naive(c32.k, c32.v, c32.p, false)));
  }
  ok &= ExpectLe("recurrent vs reference rel err (f32, 100 cases)", worst32,
                 1e-5);
  ok &= ExpectLe("recurrent vs reference rel err (f64, 100 cases)", worst64,
                 1e-10);
  ok &= ExpectLe("runtime budget (s)", SecondsSince(t0), 5.0);
  return ok;
}

// ---------------------------------------------------------------------------
// 2. Bidirectional WKV equals the pairwise reference on the same budget and
//    is exactly (bitwise) equivariant under sequence reversal.
// ---------------------------------------------------------------------------
bool TestBidirectionalOracleAndReversal() {
  auto t0 = std::chrono::steady_clock::now();
  Rng rng(0xACC'0002);
  bool ok = true;
  double worst32 = 0, worst64 = 0;
  int bitwise_failures = 0;
  for (int trial = 0; trial < 100; ++trial) {
    int64_t t = 1 + rng.uniform_int(64);
    int64_t d = 1 + rng.uniform_int(16);
    for (Dtype dt : {Dtype::F32, Dtype::F64}) {
      WkvCase c = RandomWkvCase(rng, t, d, dt);
      Tensor y = wkv::bidirectional(c.k, c.v, c.p);
      double rel = MaxRel(y, wkv::naive(c.k, c.v, c.p, true));
      (dt == Dtype::F32 ? worst32 : worst64) =
          std::max(dt == Dtype::F32 ? worst32 : worst64, rel);
      Tensor yr =
          wkv::bidirectional(ReverseRows(c.k), ReverseRows(c.v), c.p);
      if (!BitwiseEqual(ReverseRows(yr), y)) ++bitwise_failures;
    }
  }
  ok &= ExpectLe("bidirectional vs reference rel err (f32, 100 cases)",
                 worst32, 1e-5);
  ok &= ExpectLe("bidirectional vs reference rel err (f64, 100 cases)",
                 worst64, 1e-10);
  ok &= ExpectTrue("reversal equivariance bitwise on every case",
                   bitwise_failures == 0);
  ok &= ExpectLe("runtime budget (s)", SecondsSince(t0), 5.0);
  return ok;
}

// ---------------------------------------------------------------------------
// 3. Gradient suite: every differentiable op, then the end-to-end model,
//    against central finite differences.  f32 <= 1e-3, f64 <= 1e-5,
//    end-to-end (f64, 50 random parameters) <= 1e-4.  Under 2 minutes.
// ---------------------------------------------------------------------------
namespace {

Tensor Weighted(const Tensor& y) {
  Rng wr(4242);
  Tensor w = Tensor::uniform(y.shape(), wr, -1.0, 1.0, y.dtype());
  return reduce_sum(mul(y, w), {});
}

bool CheckOpGradient(const char* name, const std::vector<Tensor>& inputs,
                     const crwkv::testing::ScalarFn& fn) {
  bool ok = true;
  char label[128];
  auto r64 = crwkv::testing::grad_check(inputs, fn);
  std::snprintf(label, sizeof label, "%s FD rel err (f64)", name);
  ok &= ExpectLe(label, r64.max_rel, 1e-5);
  std::vector<Tensor> in32;
  in32.reserve(inputs.size());
  for (const Tensor& t : inputs) in32.push_back(t.astype(Dtype::F32));
  auto r32 = crwkv::testing::grad_check(in32, fn);
  std::snprintf(label, sizeof label, "%s FD rel err (f32)", name);
  ok &= ExpectLe(label, r32.max_rel, 1e-3);
  return ok;
}

bool EndToEndGradient() {
  ModelConfig cfg;
  cfg.variant = "custom";
  cfg.dims = {4, 4, 8, 8};
  cfg.depths = {1, 1, 1, 1};
  ChangeDetector model = ChangeDetector::build(cfg, 99, Dtype::F64);
  Rng rng(98);
  Tensor a = Tensor::uniform({3, 32, 32}, rng, 0.0, 1.0, Dtype::F64);
  Tensor b = Tensor::uniform({3, 32, 32}, rng, 0.0, 1.0, Dtype::F64);
  Tensor truth = Tensor::zeros({32, 32}, Dtype::F64);
  for (int64_t i = 0; i < truth.numel(); ++i)
    truth.set(i, rng.uniform() < 0.3 ? 1.0 : 0.0);

  std::vector<Tensor> grads;
  {
    Tape tape;
    Tape::Scope scope(tape);
    model.params.watch_all(tape);
    Tensor loss = total_loss(truth, model.forward(a, b));
    tape.backward(loss);
    for (size_t i = 0; i < model.params.size(); ++i)
      grads.push_back(tape.grad(model.params.at(int(i))));
  }
  auto loss_value = [&]() {
    return total_loss(truth, model.forward(a, b)).at(0);
  };

  double eps = 1e-5, worst = 0;
  for (int probe = 0; probe < 50; ++probe) {
    int pi = int(rng.uniform_int(int64_t(model.params.size())));
    Tensor& t = model.params.at(pi);
    int64_t e = rng.uniform_int(t.numel());
    double saved = t.at(e);
    t.set(e, saved + eps);
    double lp = loss_value();
    t.set(e, saved - eps);
    double lm = loss_value();
    t.set(e, saved);
    double fd = (lp - lm) / (2 * eps);
    double an = grads[size_t(pi)].at(e);
    worst = std::max(worst,
                     std::abs(fd - an) / std::max({1.0, std::abs(fd),
                                                   std::abs(an)}));
  }
  std::printf("  end-to-end FD worst rel err %.3e over 50 parameter probes\n",
              worst);
  return ExpectLe("end-to-end FD rel err (f64, 50 parameters)", worst, 1e-4);
}

}  // namespace

bool TestGradientSuite() {
  auto t0 = std::chrono::steady_clock::now();
  Rng rng(0xACC'0003);
  bool ok = true;

  Tensor m34 = Tensor::uniform({3, 4}, rng, -1.0, 1.0, Dtype::F64);
  Tensor m34b = Tensor::uniform({3, 4}, rng, -1.0, 1.0, Dtype::F64);
  Tensor v4 = Tensor::uniform({4}, rng, 0.5, 1.5, Dtype::F64);
  Tensor pos = Tensor::uniform({3, 4}, rng, 0.3, 2.0, Dtype::F64);
  Tensor away = Tensor::uniform({3, 4}, rng, 0.2, 0.8, Dtype::F64);

  using In = const std::vector<Tensor>&;
  ok &= CheckOpGradient("add", {m34, v4}, [](In in) {
    return Weighted(add(in[0], in[1]));
  });
  ok &= CheckOpGradient("sub", {m34, v4}, [](In in) {
    return Weighted(sub(in[0], in[1]));
  });
  ok &= CheckOpGradient("mul", {m34, v4}, [](In in) {
    return Weighted(mul(in[0], in[1]));
  });
  ok &= CheckOpGradient("div", {m34, v4}, [](In in) {
    return Weighted(div(in[0], in[1]));
  });
  ok &= CheckOpGradient("exp", {m34}, [](In in) {
    return Weighted(exp(in[0]));
  });
  ok &= CheckOpGradient("log", {pos}, [](In in) {
    return Weighted(log(in[0]));
  });
  ok &= CheckOpGradient("sigmoid", {m34}, [](In in) {
    return Weighted(sigmoid(in[0]));
  });
  ok &= CheckOpGradient("relu", {pos}, [](In in) {
    return Weighted(relu(in[0]));
  });
  ok &= CheckOpGradient("square", {m34}, [](In in) {
    return Weighted(square(in[0]));
  });
  ok &= CheckOpGradient("sqrt", {pos}, [](In in) {
    return Weighted(sqrt(in[0]));
  });
  ok &= CheckOpGradient("neg", {m34}, [](In in) {
    return Weighted(neg(in[0]));
  });
  ok &= CheckOpGradient("max_with_const", {pos}, [](In in) {
    return Weighted(max_with_const(in[0], 1.0));
  });
  ok &= CheckOpGradient("clamp", {away}, [](In in) {
    return Weighted(clamp(in[0], 0.0, 1.0));
  });
  ok &= CheckOpGradient("add_scalar", {m34}, [](In in) {
    return Weighted(add_scalar(in[0], 0.7));
  });
  ok &= CheckOpGradient("mul_scalar", {m34}, [](In in) {
    return Weighted(mul_scalar(in[0], -1.3));
  });
  ok &= CheckOpGradient("reduce_sum", {m34}, [](In in) {
    return Weighted(reduce_sum(in[0], {1}));
  });
  ok &= CheckOpGradient("reduce_mean", {m34}, [](In in) {
    return Weighted(reduce_mean(in[0], {0}, true));
  });
  Tensor distinct = Tensor::from_f64({2, 3}, {0.1, 0.9, 0.4, 0.8, 0.2, 0.6});
  ok &= CheckOpGradient("reduce_max", {distinct}, [](In in) {
    return Weighted(reduce_max(in[0], {1}));
  });
  ok &= CheckOpGradient("matmul", {m34, transpose2d(m34b)}, [](In in) {
    return Weighted(matmul(in[0], in[1]));
  });
  ok &= CheckOpGradient("transpose2d", {m34}, [](In in) {
    return Weighted(transpose2d(in[0]));
  });
  ok &= CheckOpGradient("reshape", {m34}, [](In in) {
    return Weighted(reshape(in[0], {2, 6}));
  });
  ok &= CheckOpGradient("concat", {m34, m34b}, [](In in) {
    std::vector<Tensor> parts = {in[0], in[1]};
    return Weighted(concat(parts, 0));
  });
  ok &= CheckOpGradient("slice", {m34}, [](In in) {
    return Weighted(slice(in[0], 1, 1, 2));
  });

  Tensor img = Tensor::uniform({2, 5, 6}, rng, -1.0, 1.0, Dtype::F64);
  Tensor kern = Tensor::uniform({3, 2, 3, 3}, rng, -0.5, 0.5, Dtype::F64);
  Tensor kbias = Tensor::uniform({3}, rng, -0.2, 0.2, Dtype::F64);
  ok &= CheckOpGradient("conv2d", {img, kern, kbias}, [](In in) {
    return Weighted(conv2d(in[0], in[1], in[2], 1, 1));
  });
  ok &= CheckOpGradient("conv2d_stride2", {img, kern, kbias}, [](In in) {
    return Weighted(conv2d(in[0], in[1], in[2], 2, 1));
  });
  Tensor img44 = Tensor::uniform({2, 4, 4}, rng, -1.0, 1.0, Dtype::F64);
  ok &= CheckOpGradient("resample_bilinear_up", {img44}, [](In in) {
    return Weighted(resample2d(in[0], 8, 8, Resample::kBilinearUp));
  });
  ok &= CheckOpGradient("resample_avgpool_down", {img44}, [](In in) {
    return Weighted(resample2d(in[0], 2, 2, Resample::kAvgPoolDown));
  });
  ok &= CheckOpGradient("resample_nearest_up", {img44}, [](In in) {
    return Weighted(resample2d(in[0], 8, 8, Resample::kNearestUp));
  });
  Tensor img854 = Tensor::uniform({8, 5, 4}, rng, -1.0, 1.0, Dtype::F64);
  ok &= CheckOpGradient("qshift", {img854}, [](In in) {
    return Weighted(qshift(in[0]));
  });

  Tensor toks = Tensor::uniform({6, 5}, rng, -1.0, 1.0, Dtype::F64);
  Tensor gamma = Tensor::uniform({5}, rng, 0.5, 1.5, Dtype::F64);
  Tensor beta = Tensor::uniform({5}, rng, -0.3, 0.3, Dtype::F64);
  ok &= CheckOpGradient("layer_norm", {toks, gamma, beta}, [](In in) {
    return Weighted(layer_norm(in[0], in[1], in[2]));
  });
  Tensor gimg = Tensor::uniform({6, 3, 4}, rng, -1.0, 1.0, Dtype::F64);
  Tensor ggamma = Tensor::uniform({6}, rng, 0.5, 1.5, Dtype::F64);
  Tensor gbeta = Tensor::uniform({6}, rng, -0.3, 0.3, Dtype::F64);
  ok &= CheckOpGradient("group_norm", {gimg, ggamma, gbeta}, [](In in) {
    return Weighted(group_norm(in[0], 3, in[1], in[2]));
  });
  ok &= CheckOpGradient("chw_tokens_roundtrip", {gimg}, [](In in) {
    return Weighted(tokens_to_chw(chw_to_tokens(in[0]), 3, 4));
  });

  Tensor wk = Tensor::uniform({7, 3}, rng, -1.0, 1.0, Dtype::F64);
  Tensor wv = Tensor::uniform({7, 3}, rng, -1.0, 1.0, Dtype::F64);
  Tensor wdecay = Tensor::uniform({3}, rng, -1.0, 0.5, Dtype::F64);
  Tensor wu = Tensor::uniform({3}, rng, -0.5, 0.5, Dtype::F64);
  ok &= CheckOpGradient("wkv_recurrent", {wk, wv, wdecay, wu}, [](In in) {
    wkv::WkvParams p{exp(in[2]), in[3]};
    return Weighted(wkv::recurrent(in[0], in[1], p));
  });
  ok &= CheckOpGradient("wkv_bidirectional", {wk, wv, wdecay, wu}, [](In in) {
    wkv::WkvParams p{exp(in[2]), in[3]};
    return Weighted(wkv::bidirectional(in[0], in[1], p));
  });

  Tensor tmask = Tensor::zeros({4, 4}, Dtype::F64);
  for (int64_t i = 0; i < tmask.numel(); ++i)
    tmask.set(i, rng.uniform() < 0.5 ? 1.0 : 0.0);
  Tensor probs = Tensor::uniform({4, 4}, rng, 0.15, 0.85, Dtype::F64);
  ok &= CheckOpGradient("bce_loss", {probs}, [&](In in) {
    return bce_loss(tmask.astype(in[0].dtype()), in[0]);
  });
  ok &= CheckOpGradient("dice_loss", {probs}, [&](In in) {
    return dice_loss(tmask.astype(in[0].dtype()), in[0]);
  });

  ok &= EndToEndGradient();
  ok &= ExpectLe("runtime budget (s)", SecondsSince(t0), 120.0);
  return ok;
}

// ---------------------------------------------------------------------------
// 4. Counted-op scaling: the streaming kernel doubles its ops when T
//    doubles (ratio 2.00 +- 0.05 for T >= 4096), the pairwise reference is
//    quadratic (ratio >= 3.9), and a full forward quadruples its ops when
//    the input side doubles (512^2 / 256^2 in [3.8, 4.4]).  Wall times are
//    recorded as informational CSVs next to the binary.
// ---------------------------------------------------------------------------
bool TestLinearScaling() {
  bool ok = true;
  std::vector<KernelBenchRow> rows;
  uint64_t prev_ops = 0;
  for (int64_t t = 4096; t <= 65536; t *= 2) {
    KernelBenchRow row = bench_kernel_once("recurrent", t, 8, 3);
    rows.push_back(row);
    if (prev_ops) {
      double ratio = double(row.ops) / double(prev_ops);
      char label[96];
      std::snprintf(label, sizeof label,
                    "recurrent ops ratio T=%lld/%lld", (long long)t,
                    (long long)(t / 2));
      ok &= ExpectInWindow(label, ratio, 1.95, 2.05);
    }
    prev_ops = row.ops;
  }
  for (int64_t t : {2048, 4096})
    rows.push_back(bench_kernel_once("bidirectional", t, 8, 3));

  KernelBenchRow na = bench_kernel_once("naive", 2048, 2, 1);
  KernelBenchRow nb = bench_kernel_once("naive", 4096, 2, 1);
  rows.push_back(na);
  rows.push_back(nb);
  ok &= ExpectTrue("pairwise reference ops ratio >= 3.9 when T doubles",
                   double(nb.ops) / double(na.ops) >= 3.9);

  ModelConfig nano = ModelConfig::variant_named("nano");
  ModelBenchRow m256 = bench_model_once(nano, 256, 1);
  ModelBenchRow m512 = bench_model_once(nano, 512, 1);
  double model_ratio = double(m512.ops) / double(m256.ops);
  ok &= ExpectInWindow("full-model ops ratio 512^2/256^2", model_ratio, 3.8,
                       4.4);

  {
    std::ofstream kout("acceptance_kernels.csv");
    write_kernel_csv(kout, rows);
    std::vector<ModelBenchRow> mrows = {m256, m512};
    std::ofstream mout("acceptance_model.csv");
    write_model_csv(mout, mrows);
  }
  std::printf(
      "  wall-time ratios (informational): recurrent 8192/4096 %.2f, "
      "model 512/256 %.2f; CSVs: acceptance_kernels.csv, "
      "acceptance_model.csv\n",
      double(rows[1].wall_ns) / double(std::max<uint64_t>(1, rows[0].wall_ns)),
      double(m512.wall_ns) / double(std::max<uint64_t>(1, m256.wall_ns)));
  return ok;
}

// ---------------------------------------------------------------------------
// 5. Accounting vs the reference budgets (+-25%): parameters for T/S/B and
//    analytic forward FLOPs at 256^2 (T/S/B) and 512^2 (B).
//
// KNOWN DEVIATION: at the stated widths and depths this architecture
// measures roughly a quarter of the budgeted parameters and half of the
// budgeted FLOPs, and no width rescaling satisfies both budgets at once
// (parameters would need ~2x widths, FLOPs ~1.4x).  The budgets appear to
// describe a larger, unspecified stem/decoder.  The checks below run
// honestly and this test is EXPECTED TO FAIL; see README "Accounting
// notes" for the full reconciliation.
// ---------------------------------------------------------------------------
bool TestAccountingBudgets() {
  struct ParamBudget {
    const char* variant;
    double budget;
  };
  struct FlopBudget {
    const char* variant;
    int64_t side;
    double budget;
  };
  const ParamBudget params[] = {
      {"T", 4.66e6}, {"S", 12.00e6}, {"B", 20.50e6}};
  const FlopBudget flops[] = {{"T", 256, 9.40e9},
                              {"S", 256, 18.15e9},
                              {"B", 256, 33.56e9},
                              {"B", 512, 134.25e9}};
  bool ok = true;
  for (const auto& pb : params) {
    ModelConfig cfg = ModelConfig::variant_named(pb.variant);
    double got = double(count_parameters(cfg, /*full_model=*/true));
    char label[96];
    std::snprintf(label, sizeof label, "%s parameters (M), budget %.2fM",
                  pb.variant, pb.budget / 1e6);
    ok &= ExpectInWindow(label, got / 1e6, 0.75 * pb.budget / 1e6,
                         1.25 * pb.budget / 1e6);
  }
  for (const auto& fb : flops) {
    ModelConfig cfg = ModelConfig::variant_named(fb.variant);
    double got = double(count_flops(cfg, fb.side, fb.side));
    char label[96];
    std::snprintf(label, sizeof label,
                  "%s forward GFLOPs at %lld^2, budget %.2fG", fb.variant,
                  (long long)fb.side, fb.budget / 1e9);
    ok &= ExpectInWindow(label, got / 1e9, 0.75 * fb.budget / 1e9,
                         1.25 * fb.budget / 1e9);
  }
  if (!ok)
    std::printf(
        "  (known deviation, documented in README \"Accounting notes\")\n");
  return ok;
}

// ---------------------------------------------------------------------------
// 6. The detector is symmetric in its two inputs: forward(A,B) ==
//    forward(B,A) within 1e-6 relative on 10 random pairs (bitwise here,
//    since every fusion reduction is order-fixed).
// ---------------------------------------------------------------------------
bool TestTemporalSymmetry() {
  ChangeDetector model =
      ChangeDetector::build(ModelConfig::variant_named("nano"), 6);
  Rng rng(0xACC'0006);
  bool ok = true;
  int bitwise = 0;
  double worst = 0;
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a = Tensor::uniform({3, 64, 64}, rng, 0.0, 1.0, Dtype::F32);
    Tensor b = Tensor::uniform({3, 64, 64}, rng, 0.0, 1.0, Dtype::F32);
    Tensor pab = model.forward(a, b);
    Tensor pba = model.forward(b, a);
    worst = std::max(worst, MaxRel(pab, pba));
    if (BitwiseEqual(pab, pba)) ++bitwise;
  }
  ok &= ExpectLe("forward(A,B) vs forward(B,A) rel err (10 pairs)", worst,
                 1e-6);
  std::printf("  bitwise identical on %d/10 pairs\n", bitwise);
  return ok;
}

// ---------------------------------------------------------------------------
// 7. Loss analytics: bce(0.5) = ln 2, dice = 0 on perfect and on empty
//    masks exactly, F1 = 2*IoU/(1+IoU) across 100 random confusion sets.
// ---------------------------------------------------------------------------
bool TestLossAnalytics() {
  bool ok = true;
  Rng rng(0xACC'0007);
  Tensor truth = Tensor::zeros({8, 8}, Dtype::F64);
  for (int64_t i = 0; i < truth.numel(); ++i)
    truth.set(i, rng.uniform() < 0.5 ? 1.0 : 0.0);
  Tensor half = Tensor::full({8, 8}, 0.5, Dtype::F64);
  ok &= ExpectNear("bce(prediction=0.5)", bce_loss(truth, half).at(0),
                   std::log(2.0), 1e-6);

  Tensor empty = Tensor::zeros({8, 8}, Dtype::F32);
  ok &= ExpectTrue("dice(empty, empty) == 0 exactly",
                   dice_loss(empty, empty).at(0) == 0.0);
  Tensor m = Tensor::zeros({8, 8}, Dtype::F32);
  for (int64_t i = 0; i < 24; ++i) m.set(i, 1.0);
  ok &= ExpectTrue("dice(mask, mask) == 0 exactly",
                   dice_loss(m, m).at(0) == 0.0);

  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    ConfusionCounts c;
    c.tp = 1 + int64_t(rng.uniform_int(1000));
    c.fp = int64_t(rng.uniform_int(1000));
    c.fn = int64_t(rng.uniform_int(1000));
    c.tn = int64_t(rng.uniform_int(1000));
    Metrics mt = metrics_from_counts(c);
    worst = std::max(worst, std::abs(mt.f1 - 2 * mt.iou / (1 + mt.iou)));
  }
  ok &= ExpectLe("max |F1 - 2*IoU/(1+IoU)| over 100 confusion sets", worst,
                 1e-12);
  return ok;
}

// ---------------------------------------------------------------------------
// 8. Desk-scale training: nano on difficulty-1 synthetic 64^2 pairs,
//    2000 steps; held-out IoU >= 0.90 as the median over 3 seeds, total
//    runtime <= 30 minutes on one core.  (Protocol: 256 training pairs +
//    32 held-out pairs per seed, batch 4, peak lr 2e-3, flip augmentation.)
// ---------------------------------------------------------------------------
namespace {

struct ProtocolRun {
  double iou = 0;
  double seconds = 0;
};

ProtocolRun RunDeskProtocol(Fusion fusion, uint64_t seed) {
  auto t0 = std::chrono::steady_clock::now();
  SynthOptions opt;
  opt.difficulty = 1;
  std::vector<ChangeSample> train = synth_generate(256, opt, 1000 + seed);
  std::vector<ChangeSample> val = synth_generate(32, opt, 9000 + seed);
  ModelConfig cfg = ModelConfig::variant_named("nano");
  cfg.fusion = fusion;
  ChangeDetector model = ChangeDetector::build(cfg, seed);
  TrainConfig tc;
  tc.lr = 2e-3;
  tc.seed = seed;
  tc.verbose = false;
  tc.augment_flips = true;
  TrainResult r = train_model(model, tc, train, val);
  return {r.best_iou, SecondsSince(t0)};
}

double Median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[1];
}

std::vector<double> g_cbam_ious;  // reused by the ablation report

}  // namespace

bool TestDeskScaleTraining() {
  auto t0 = std::chrono::steady_clock::now();
  g_cbam_ious.clear();
  for (uint64_t seed : {1, 2, 3}) {
    ProtocolRun run = RunDeskProtocol(Fusion::kCrossCbam, seed);
    std::printf("  seed %llu: held-out IoU %.4f (%.1f min)\n",
                (unsigned long long)seed, run.iou, run.seconds / 60.0);
    g_cbam_ious.push_back(run.iou);
  }
  double minutes = SecondsSince(t0) / 60.0;
  bool ok = true;
  ok &= ExpectTrue("median held-out IoU >= 0.90 over 3 seeds",
                   Median3(g_cbam_ious) >= 0.90);
  std::printf("  median IoU %.4f, total %.1f min\n", Median3(g_cbam_ious),
              minutes);
  ok &= ExpectLe("training runtime (min)", minutes, 30.0);
  return ok;
}

// ---------------------------------------------------------------------------
// 9. Fusion ablation (informational): Cross-CBAM vs SiamDiff held-out IoU
//    under the same desk-scale protocol as the training check above, 3 seeds
//    each.  Reported, not ranked: desk scale is too small to assert an
//    ordering.
// ---------------------------------------------------------------------------
bool TestFusionAblationReport() {
  std::vector<double> cbam = g_cbam_ious;
  if (cbam.size() != 3)
    for (uint64_t seed : {1, 2, 3})
      cbam.push_back(RunDeskProtocol(Fusion::kCrossCbam, seed).iou);
  std::vector<double> diff;
  for (uint64_t seed : {1, 2, 3}) {
    ProtocolRun run = RunDeskProtocol(Fusion::kSiamDiff, seed);
    std::printf("  siamdiff seed %llu: held-out IoU %.4f (%.1f min)\n",
                (unsigned long long)seed, run.iou, run.seconds / 60.0);
    diff.push_back(run.iou);
  }
  std::printf(
      "  cross_cbam median IoU %.4f vs siamdiff median IoU %.4f "
      "(informational)\n",
      Median3(cbam), Median3(diff));
  return true;
}

// ---------------------------------------------------------------------------
// 10. Round-trip and determinism: checkpoints are bitwise lossless, a
//     seeded 10-step training run is bitwise repeatable, and tiled
//     inference equals the direct forward on single-tile inputs.
// ---------------------------------------------------------------------------
bool TestRoundTripDeterminism() {
  bool ok = true;
  namespace fs = std::filesystem;
  fs::path ckpt = fs::temp_directory_path() / "crwkv_acceptance.ckpt";

  {
    ChangeDetector model =
        ChangeDetector::build(ModelConfig::variant_named("nano"), 77);
    io::save_checkpoint(ckpt.string(), model.params, model.cfg.to_kv());
    ChangeDetector back = load_model(ckpt.string());
    bool same = back.params.size() == model.params.size();
    for (size_t i = 0; same && i < model.params.size(); ++i)
      same = back.params.name(int(i)) == model.params.name(int(i)) &&
             BitwiseEqual(back.params.at(int(i)), model.params.at(int(i)));
    ok &= ExpectTrue("checkpoint round trip bitwise", same);
    fs::remove(ckpt);
  }

  {
    SynthOptions opt;
    opt.height = 32;
    opt.width = 32;
    std::vector<ChangeSample> data = synth_generate(8, opt, 5100);
    auto run = [&]() {
      ChangeDetector model =
          ChangeDetector::build(ModelConfig::variant_named("nano"), 21);
      TrainConfig tc;
      tc.max_steps = 10;
      tc.warmup_steps = 3;
      tc.batch_size = 2;
      tc.seed = 55;
      tc.verbose = false;
      TrainResult r = train_model(model, tc, data, {});
      return std::make_pair(std::move(model), r.loss_history);
    };
    auto [m1, h1] = run();
    auto [m2, h2] = run();
    bool same = h1 == h2 && m1.params.size() == m2.params.size();
    for (size_t i = 0; same && i < m1.params.size(); ++i)
      same = BitwiseEqual(m1.params.at(int(i)), m2.params.at(int(i)));
    ok &= ExpectTrue("same-seed 10-step training bitwise identical", same);
  }

  {
    ChangeDetector model =
        ChangeDetector::build(ModelConfig::variant_named("nano"), 23);
    SynthOptions opt;
    ChangeSample s = synth_sample(opt, 5200);
    Tensor direct = model.forward(s.a, s.b);
    ok &= ExpectTrue(
        "tiled == direct on a single-tile input (no overlap)",
        BitwiseEqual(tiled_inference(model, s.a, s.b, 64, 0), direct));
    ok &= ExpectTrue(
        "tiled == direct on a single-tile input (50% overlap)",
        BitwiseEqual(tiled_inference(model, s.a, s.b, 64, 32), direct));
  }
  return ok;
}

int main(int argc, char** argv) {
  if (argc > 1) g_filter = argv[1];
  std::printf("[==========] Running ChangeRWKV acceptance tests\n");

  RUN_TEST(TestWkvOracleEquivalence);
  RUN_TEST(TestBidirectionalOracleAndReversal);
  RUN_TEST(TestGradientSuite);
  RUN_TEST(TestLinearScaling);
  RUN_TEST(TestAccountingBudgets);
  RUN_TEST(TestTemporalSymmetry);
  RUN_TEST(TestLossAnalytics);
  RUN_TEST(TestDeskScaleTraining);
  RUN_TEST(TestFusionAblationReport);
  RUN_TEST(TestRoundTripDeterminism);

  std::printf("[==========] %d/%d tests passed\n", g_tests_passed,
              g_tests_run);
  return g_tests_passed == g_tests_run ? 0 : 1;
}
