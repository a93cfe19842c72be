// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#include "crwkv/selftest.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <sstream>

#include "crwkv/infer.hpp"
#include "crwkv/io.hpp"
#include "crwkv/model.hpp"
#include "crwkv/train.hpp"
#include "crwkv/wkv.hpp"

namespace crwkv {
namespace {

double rel_err(const Tensor& got, const Tensor& want) {
  double worst = 0.0;
  for (int64_t i = 0; i < got.numel(); ++i) {
    double g = got.at(i), w = want.at(i);
    double err = std::abs(g - w) / std::max(1.0, std::abs(w));
    worst = std::max(worst, err);
  }
  return worst;
}

bool bitwise_equal(const Tensor& x, const Tensor& y) {
  if (!same_shape(x.shape(), y.shape()) || x.dtype() != y.dtype()) return false;
  size_t bytes = size_t(x.numel()) * dtype_size(x.dtype());
  const void* px = x.dtype() == Dtype::F32
                       ? static_cast<const void*>(x.data<float>().data())
                       : static_cast<const void*>(x.data<double>().data());
  const void* py = y.dtype() == Dtype::F32
                       ? static_cast<const void*>(y.data<float>().data())
                       : static_cast<const void*>(y.data<double>().data());
  return std::memcmp(px, py, bytes) == 0;
}

Tensor reverse_rows(const Tensor& x) {
  int64_t t = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  for (int64_t i = 0; i < t; ++i)
    for (int64_t j = 0; j < d; ++j)
      out.set((t - 1 - i) * d + j, x.at(i * d + j));
  return out;
}

struct Check {
  std::string name;
  std::function<std::string()> run;  // empty string = pass
};

std::string check_recurrent_oracle() {
  Rng rng(11);
  Tensor k = Tensor::uniform({40, 6}, rng, -1.5, 1.5, Dtype::F64);
  Tensor v = Tensor::uniform({40, 6}, rng, -2.0, 2.0, Dtype::F64);
  wkv::WkvParams p{Tensor::uniform({6}, rng, 0.1, 1.2, Dtype::F64),
                   Tensor::uniform({6}, rng, -0.5, 0.5, Dtype::F64)};
  double err = rel_err(wkv::recurrent(k, v, p), wkv::naive(k, v, p, false));
  if (err > 1e-10) {
    std::ostringstream os;
    os << "rel err " << err;
    return os.str();
  }
  return "";
}

std::string check_bidirectional_oracle() {
  Rng rng(12);
  Tensor k = Tensor::uniform({40, 6}, rng, -1.5, 1.5, Dtype::F64);
  Tensor v = Tensor::uniform({40, 6}, rng, -2.0, 2.0, Dtype::F64);
  wkv::WkvParams p{Tensor::uniform({6}, rng, 0.1, 1.2, Dtype::F64),
                   Tensor::uniform({6}, rng, -0.5, 0.5, Dtype::F64)};
  Tensor y = wkv::bidirectional(k, v, p);
  double err = rel_err(y, wkv::naive(k, v, p, true));
  if (err > 1e-10) return "rel err vs oracle too large";
  Tensor yr = wkv::bidirectional(reverse_rows(k), reverse_rows(v), p);
  if (!bitwise_equal(reverse_rows(yr), y))
    return "sequence reversal changed the output";
  return "";
}

std::string check_backward_fd() {
  Rng rng(13);
  int64_t t = 12, d = 3;
  Tensor k = Tensor::uniform({t, d}, rng, -1.0, 1.0, Dtype::F64);
  Tensor v = Tensor::uniform({t, d}, rng, -1.0, 1.0, Dtype::F64);
  wkv::WkvParams p{Tensor::uniform({d}, rng, 0.2, 1.0, Dtype::F64),
                   Tensor::uniform({d}, rng, -0.3, 0.3, Dtype::F64)};
  Tensor g = Tensor::uniform({t, d}, rng, -1.0, 1.0, Dtype::F64);
  wkv::WkvGrads grads = wkv::backward_bidirectional(k, v, p, g);
  auto loss_with = [&](const Tensor& kk) {
    Tensor y = wkv::bidirectional(kk, v, p);
    double l = 0;
    for (int64_t i = 0; i < y.numel(); ++i) l += g.at(i) * y.at(i);
    return l;
  };
  double eps = 1e-6;
  for (int64_t i : {int64_t(0), t * d / 2, t * d - 1}) {
    Tensor kp = k.clone(), km = k.clone();
    kp.set(i, k.at(i) + eps);
    km.set(i, k.at(i) - eps);
    double fd = (loss_with(kp) - loss_with(km)) / (2 * eps);
    double an = grads.k.at(i);
    if (std::abs(fd - an) / std::max(1.0, std::abs(fd)) > 1e-6)
      return "grad_k mismatch at flat index " + std::to_string(i);
  }
  return "";
}

std::string check_loss_identities() {
  Tensor truth = Tensor::from_f32({2, 2}, {0, 1, 1, 0});
  Tensor half = Tensor::full({2, 2}, 0.5);
  double bce = bce_loss(truth, half).item();
  if (std::abs(bce - std::log(2.0)) > 1e-6) return "bce(0.5) != ln 2";
  double d_perfect = dice_loss(truth, truth).item();
  if (d_perfect != 0.0) return "dice(perfect) != 0";
  Tensor empty = Tensor::zeros({2, 2});
  if (dice_loss(empty, empty).item() != 0.0) return "dice(empty) != 0";
  Rng rng(14);
  for (int i = 0; i < 100; ++i) {
    ConfusionCounts c{int64_t(rng.uniform_int(50)) + 1,
                      int64_t(rng.uniform_int(50)),
                      int64_t(rng.uniform_int(50)), 0};
    Metrics m = metrics_from_counts(c);
    if (std::abs(m.f1 - 2 * m.iou / (1 + m.iou)) > 1e-12)
      return "f1 != 2*iou/(1+iou)";
  }
  return "";
}

std::string check_serialization() {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "crwkv_selftest";
  fs::create_directories(dir);
  Rng rng(15);
  Tensor t = Tensor::uniform({3, 5, 7}, rng, -4.0, 4.0);
  std::string path = (dir / "t.ctn").string();
  io::write_ctn_file(path, io::blob_from_tensor(t));
  if (!bitwise_equal(io::tensor_from_blob(io::read_ctn_file(path)), t))
    return "ctn round trip not bitwise";

  ModelConfig cfg = ModelConfig::variant_named("nano");
  ChangeDetector m = ChangeDetector::build(cfg, 3);
  std::string ck = (dir / "m.ckpt").string();
  io::save_checkpoint(ck, m.params, cfg.to_kv());
  ParamStore loaded;
  std::string text = io::load_checkpoint(ck, loaded);
  ModelConfig cfg2 = ModelConfig::from_kv(io::parse_kv(text));
  if (cfg2.variant != "nano") return "config did not survive checkpoint";
  if (loaded.size() != m.params.size()) return "parameter count changed";
  for (size_t i = 0; i < loaded.size(); ++i)
    if (!bitwise_equal(loaded.at(int(i)), m.params.at(int(i))))
      return "parameter " + m.params.name(int(i)) + " not bitwise";
  return "";
}

std::string check_temporal_symmetry() {
  ModelConfig cfg = ModelConfig::variant_named("nano");
  ChangeDetector m = ChangeDetector::build(cfg, 5);
  Rng rng(16);
  Tensor a = Tensor::uniform({3, 32, 32}, rng, 0.0, 1.0);
  Tensor b = Tensor::uniform({3, 32, 32}, rng, 0.0, 1.0);
  double err = rel_err(m.forward(a, b), m.forward(b, a));
  if (err > 1e-6) return "forward(a,b) != forward(b,a)";
  return "";
}

std::string check_end_to_end_learning() {
  // One tiny gradient step must reduce the loss on a fixed batch.
  ModelConfig cfg = ModelConfig::variant_named("nano");
  ChangeDetector model = ChangeDetector::build(cfg, 21);
  SynthOptions opt;
  opt.height = opt.width = 32;
  opt.difficulty = 0;
  auto data = synth_generate(2, opt, 77);
  TrainConfig tc;
  tc.batch_size = 1;
  tc.max_steps = 3;
  tc.warmup_steps = 1;
  tc.eval_every = 3;
  tc.verbose = false;
  double before;
  {
    Tensor p = model.forward(data[0].a, data[0].b);
    before = total_loss(data[0].mask, p).item();
  }
  train_model(model, tc, std::span(data.data(), 1), std::span(data.data(), 1));
  Tensor p = model.forward(data[0].a, data[0].b);
  double after = total_loss(data[0].mask, p).item();
  if (!(after < before)) return "loss did not decrease after 3 steps";
  return "";
}

}  // namespace

std::vector<CheckResult> run_selftest() {
  std::vector<Check> checks = {
      {"wkv recurrent matches reference", check_recurrent_oracle},
      {"wkv bidirectional matches reference + reversal", check_bidirectional_oracle},
      {"wkv backward matches finite differences", check_backward_fd},
      {"loss identities", check_loss_identities},
      {"serialization round trip", check_serialization},
      {"temporal symmetry", check_temporal_symmetry},
      {"short training reduces loss", check_end_to_end_learning},
  };
  std::vector<CheckResult> results;
  for (auto& c : checks) {
    CheckResult r;
    r.name = c.name;
    try {
      std::string detail = c.run();
      r.pass = detail.empty();
      r.detail = detail;
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = e.what();
    }
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace crwkv
