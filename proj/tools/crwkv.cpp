// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
//
// changerwkv command-line front end:
//   synth    - emit a synthetic bi-temporal dataset directory
//   train    - train a change detector (config file + flag overrides)
//   infer    - run a checkpoint on an image pair (optionally tiled)
//   eval     - metrics of a checkpoint over a dataset directory
//   bench    - instrumented op/wall benchmarks (kernels or full model)
//   selftest - fast oracle sanity suite
//
// Exit codes: 0 success, 1 validation/config/io error, 2 numeric failure.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "crwkv/bench.hpp"
#include "crwkv/infer.hpp"
#include "crwkv/io.hpp"
#include "crwkv/model.hpp"
#include "crwkv/selftest.hpp"
#include "crwkv/synth.hpp"
#include "crwkv/train.hpp"

namespace {

using namespace crwkv;

std::vector<int64_t> parse_sizes(const std::string& csv) {
  std::vector<int64_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoll(item));
    } catch (const std::exception&) {
      throw ConfigError("bad size '" + item + "' in --sizes");
    }
  }
  if (out.empty()) throw ConfigError("--sizes is empty");
  for (size_t i = 1; i < out.size(); ++i)
    if (out[i] <= out[i - 1])
      throw ConfigError("--sizes must be strictly ascending");
  return out;
}

void ensure_parent_dir(const std::string& path) {
  if (path.empty() || path == "-") return;
  std::filesystem::path parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

// Writes to a path, or stdout for "-".
void emit(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  ensure_parent_dir(path);
  io::write_text_file(path, text);
  std::fprintf(stderr, "wrote %s\n", path.c_str());
}

struct SynthArgs {
  std::string out;
  int count = 16;
  int64_t size = 64;
  int difficulty = 1;
  uint64_t seed = 0;
  int min_shapes = 3, max_shapes = 6;
  int min_changes = 1, max_changes = 3;
};

int run_synth(const SynthArgs& a) {
  SynthOptions opt;
  opt.height = opt.width = a.size;
  opt.difficulty = a.difficulty;
  opt.min_shapes = a.min_shapes;
  opt.max_shapes = a.max_shapes;
  opt.min_changes = a.min_changes;
  opt.max_changes = a.max_changes;
  auto samples = synth_generate(a.count, opt, a.seed);
  write_dataset(a.out, samples);
  std::fprintf(stderr, "wrote %d samples to %s\n", a.count, a.out.c_str());
  return 0;
}

struct TrainArgs {
  std::string config;       // key=value file: model + optimizer keys
  std::string data;         // dataset dir; empty = synthesize on the fly
  std::string val_data;
  std::string out = "model.ckpt";
  std::string variant = "nano";
  std::string fusion = "cross_cbam";
  bool block_mlp_mix = false, sfm_mlp_mix = false, no_sfm = false;
  bool paper_hparams = false;
  bool augment = false;
  bool quiet = false;
  double lr = 0, lambda_dice = -1;
  int steps = 0, batch = 0, warmup = -1, eval_every = 0;
  uint64_t seed = 0;
  int synth_count = 64;
  int64_t size = 64;
  int difficulty = 1;
  double val_frac = 0.2;
};

int run_train(const TrainArgs& a, const CLI::App* cmd) {
  std::map<std::string, std::string> kv;
  if (!a.config.empty()) kv = io::parse_kv(io::read_text_file(a.config));

  // Model config: file first, then explicit flags win.
  ModelConfig mc = kv.count("variant") || kv.count("dims")
                       ? ModelConfig::from_kv(kv)
                       : ModelConfig::variant_named(a.variant);
  if (cmd->count("--variant")) mc = ModelConfig::variant_named(a.variant);
  if (cmd->count("--fusion") || !kv.count("fusion"))
    mc.fusion = fusion_from_name(a.fusion);
  if (cmd->count("--block-mlp-mix")) mc.block_mlp_mix = a.block_mlp_mix;
  if (cmd->count("--sfm-mlp-mix")) mc.sfm_mlp_mix = a.sfm_mlp_mix;
  if (cmd->count("--no-sfm")) mc.use_sfm = !a.no_sfm;

  // Data.
  std::vector<ChangeSample> train_set, val_set;
  if (!a.data.empty()) {
    train_set = load_dataset(a.data);
    if (!a.val_data.empty()) {
      val_set = load_dataset(a.val_data);
    } else {
      size_t n_val = std::max<size_t>(1, size_t(double(train_set.size()) * a.val_frac));
      if (n_val >= train_set.size())
        throw ConfigError("train: dataset too small to split a validation set");
      val_set.assign(train_set.end() - long(n_val), train_set.end());
      train_set.resize(train_set.size() - n_val);
    }
  } else {
    SynthOptions opt;
    opt.height = opt.width = a.size;
    opt.difficulty = a.difficulty;
    int n_val = std::max(1, int(double(a.synth_count) * a.val_frac));
    train_set = synth_generate(a.synth_count, opt, a.seed * 2 + 1);
    val_set = synth_generate(n_val, opt, a.seed * 2 + 2);
    std::fprintf(stderr, "synthesized %d train / %d val samples\n",
                 a.synth_count, n_val);
  }

  // Optimizer config: defaults <- file <- flags.
  TrainConfig tc = TrainConfig::desk();
  if (a.paper_hparams) {
    int spe = std::max<int>(1, int(train_set.size()) / 8);
    tc = TrainConfig::publication(spe);
  }
  auto geti = [&](const char* key, int& slot) {
    if (kv.count(key)) slot = int(std::stoll(kv.at(key)));
  };
  auto getd = [&](const char* key, double& slot) {
    if (kv.count(key)) slot = std::stod(kv.at(key));
  };
  getd("lr", tc.lr);
  getd("weight_decay", tc.weight_decay);
  getd("lambda_dice", tc.lambda_dice);
  getd("grad_clip", tc.grad_clip);
  geti("batch_size", tc.batch_size);
  geti("max_steps", tc.max_steps);
  geti("warmup_steps", tc.warmup_steps);
  geti("eval_every", tc.eval_every);
  if (kv.count("seed")) tc.seed = uint64_t(std::stoull(kv.at("seed")));
  if (kv.count("augment_flips"))
    tc.augment_flips = kv.at("augment_flips") == "1";
  if (cmd->count("--lr")) tc.lr = a.lr;
  if (cmd->count("--lambda-dice")) tc.lambda_dice = a.lambda_dice;
  if (cmd->count("--steps")) tc.max_steps = a.steps;
  if (cmd->count("--batch")) tc.batch_size = a.batch;
  if (cmd->count("--warmup")) tc.warmup_steps = a.warmup;
  if (cmd->count("--eval-every")) tc.eval_every = a.eval_every;
  if (cmd->count("--seed")) tc.seed = a.seed;
  if (cmd->count("--augment")) tc.augment_flips = a.augment;
  tc.verbose = !a.quiet;

  ChangeDetector model = ChangeDetector::build(mc, tc.seed);
  std::fprintf(stderr, "%s: %lld parameters, fusion=%s\n", mc.variant.c_str(),
               (long long)model.parameter_count(), fusion_name(mc.fusion));
  ensure_parent_dir(a.out);
  TrainResult res = train_model(model, tc, train_set, val_set, a.out);
  std::printf("best_iou=%.4f best_f1=%.4f best_step=%d final_loss=%.4f\n",
              res.best_iou, res.best_f1, res.best_step, res.final_loss);
  std::fprintf(stderr, "checkpoint: %s\n", a.out.c_str());
  return 0;
}

struct InferArgs {
  std::string a, b, ckpt;
  std::string out = "mask.png";
  std::string prob_out, overlay_out, mask;
  int64_t tile = 0;
  int64_t overlap = -1;
  double threshold = 0.5;
};

int run_infer(const InferArgs& args) {
  ChangeDetector model = load_model(args.ckpt);
  Tensor a = io::read_image_any(args.a);
  Tensor b = io::read_image_any(args.b);
  if (!same_shape(a.shape(), b.shape()))
    throw ShapeError("infer: image sizes differ: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  Tensor prob;
  if (args.tile > 0) {
    int64_t overlap = args.overlap >= 0 ? args.overlap : args.tile / 2;
    prob = tiled_inference(model, a, b, args.tile, overlap);
  } else {
    prob = model.forward(a, b);
  }
  Tensor mask = Tensor::zeros(prob.shape(), Dtype::F32);
  for (int64_t i = 0; i < prob.numel(); ++i)
    mask.set(i, prob.at(i) > args.threshold ? 1.0 : 0.0);
  ensure_parent_dir(args.out);
  io::write_png(args.out, mask);
  std::fprintf(stderr, "wrote %s\n", args.out.c_str());
  if (!args.prob_out.empty()) {
    ensure_parent_dir(args.prob_out);
    io::write_png(args.prob_out, prob);
    std::fprintf(stderr, "wrote %s\n", args.prob_out.c_str());
  }
  if (!args.overlay_out.empty()) {
    if (args.mask.empty())
      throw ConfigError("--overlay needs --mask (ground truth)");
    Tensor truth = io::read_image_any(args.mask);
    if (truth.ndim() == 3) truth = truth.view({truth.dim(1), truth.dim(2)});
    ensure_parent_dir(args.overlay_out);
    io::write_png(args.overlay_out,
                  render_overlay(truth, prob, args.threshold));
    std::fprintf(stderr, "wrote %s\n", args.overlay_out.c_str());
  }
  return 0;
}

struct EvalArgs {
  std::string data, ckpt;
  std::string csv = "-";
  double threshold = 0.5;
  int64_t tile = 0;
  bool per_image = false;  // macro-average instead of one global confusion
};

int run_eval(const EvalArgs& a) {
  ChangeDetector model = load_model(a.ckpt);
  auto samples = load_dataset(a.data);
  if (samples.empty()) throw IoError("eval: empty dataset " + a.data);
  ConfusionCounts total;
  Metrics mean;
  for (const ChangeSample& s : samples) {
    Tensor prob = a.tile > 0
                      ? tiled_inference(model, s.a, s.b, a.tile, a.tile / 2)
                      : model.forward(s.a, s.b);
    ConfusionCounts c = confusion(s.mask, prob, a.threshold);
    total += c;
    Metrics pm = metrics_from_counts(c);
    mean.precision += pm.precision;
    mean.recall += pm.recall;
    mean.f1 += pm.f1;
    mean.iou += pm.iou;
  }
  Metrics m = metrics_from_counts(total);
  if (a.per_image) {
    double n = double(samples.size());
    m = {mean.precision / n, mean.recall / n, mean.f1 / n, mean.iou / n};
  }
  char row[256];
  std::snprintf(row, sizeof row, "%s,%s,%.2f,%.4f,%.4f,%.4f,%.4f\n",
                a.data.c_str(), model.cfg.variant.c_str(), a.threshold,
                100.0 * m.precision, 100.0 * m.recall, 100.0 * m.f1,
                100.0 * m.iou);
  emit(a.csv, std::string("dataset,variant,threshold,P,R,F1,IoU\n") + row);
  return 0;
}

struct BenchArgs {
  std::string target;
  std::string sizes;
  std::string csv = "-";
  std::string variant = "T";
  int64_t d = 32;
  int repeats = 3;
};

int run_bench(const BenchArgs& a) {
  std::ostringstream os;
  if (a.target == "full-model") {
    std::string sizes = a.sizes.empty() ? "64,128,256,512,1024" : a.sizes;
    ModelConfig cfg = ModelConfig::variant_named(a.variant);
    std::vector<ModelBenchRow> rows;
    for (int64_t r : parse_sizes(sizes))
      rows.push_back(bench_model_once(cfg, r, a.repeats));
    write_model_csv(os, rows);
  } else {
    std::string kernel;
    if (a.target == "wkv-recurrent") kernel = "recurrent";
    else if (a.target == "wkv-bidirectional") kernel = "bidirectional";
    else if (a.target == "wkv-naive") kernel = "naive";
    else
      throw ConfigError(
          "unknown --target '" + a.target +
          "' (expected wkv-recurrent|wkv-bidirectional|wkv-naive|full-model)");
    // Quadratic reference: default sweep stops where a run is still seconds.
    std::string fallback = kernel == "naive"
                               ? "64,256,1024,4096,8192"
                               : "64,256,1024,4096,16384,65536,262144,1048576";
    auto t_values = parse_sizes(a.sizes.empty() ? fallback : a.sizes);
    write_kernel_csv(os, bench_kernels(kernel, t_values, a.d, a.repeats));
  }
  emit(a.csv, os.str());
  return 0;
}

int run_selftest_cmd() {
  auto results = run_selftest();
  int failed = 0;
  for (const auto& r : results) {
    std::printf("[%s] %s%s%s\n", r.pass ? " ok " : "FAIL", r.name.c_str(),
                r.detail.empty() ? "" : ": ", r.detail.c_str());
    if (!r.pass) ++failed;
  }
  std::printf("%d/%d checks passed\n", int(results.size()) - failed,
              int(results.size()));
  return failed == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"changerwkv: linear-time RWKV change detection"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "emit a synthetic dataset");
  synth->add_option("--out", sa.out, "output directory")->required();
  synth->add_option("--count", sa.count, "number of samples");
  synth->add_option("--size", sa.size, "tile size (multiple of 16)");
  synth->add_option("--difficulty", sa.difficulty, "0..3");
  synth->add_option("--seed", sa.seed, "rng seed");
  synth->add_option("--min-shapes", sa.min_shapes);
  synth->add_option("--max-shapes", sa.max_shapes);
  synth->add_option("--min-changes", sa.min_changes);
  synth->add_option("--max-changes", sa.max_changes);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a change detector");
  train->add_option("--config", ta.config, "key=value config file");
  train->add_option("--data", ta.data, "dataset dir (omit to synthesize)");
  train->add_option("--val-data", ta.val_data, "separate validation dir");
  train->add_option("--out", ta.out, "checkpoint path");
  train->add_option("--variant", ta.variant, "T|S|B|nano");
  train->add_option("--fusion", ta.fusion, "cross_cbam|siamdiff|siamconc");
  train->add_flag("--block-mlp-mix", ta.block_mlp_mix);
  train->add_flag("--sfm-mlp-mix", ta.sfm_mlp_mix);
  train->add_flag("--no-sfm", ta.no_sfm);
  train->add_flag("--paper-hparams", ta.paper_hparams,
                  "original schedule (lr 1e-5, 200 epochs)");
  train->add_flag("--augment", ta.augment, "random flips");
  train->add_flag("--quiet", ta.quiet);
  train->add_option("--lr", ta.lr);
  train->add_option("--lambda-dice", ta.lambda_dice);
  train->add_option("--steps", ta.steps);
  train->add_option("--batch", ta.batch);
  train->add_option("--warmup", ta.warmup);
  train->add_option("--eval-every", ta.eval_every);
  train->add_option("--seed", ta.seed);
  train->add_option("--synth-count", ta.synth_count);
  train->add_option("--size", ta.size);
  train->add_option("--difficulty", ta.difficulty);
  train->add_option("--val-frac", ta.val_frac);

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "run a checkpoint on a pair");
  infer->add_option("--a", ia.a, "first image")->required();
  infer->add_option("--b", ia.b, "second image")->required();
  infer->add_option("--ckpt", ia.ckpt, "checkpoint")->required();
  infer->add_option("--out", ia.out, "binary mask PNG");
  infer->add_option("--prob", ia.prob_out, "probability map PNG");
  infer->add_option("--overlay", ia.overlay_out, "TP/FP/FN overlay PNG");
  infer->add_option("--mask", ia.mask, "ground-truth mask for the overlay");
  infer->add_option("--tile", ia.tile, "sliding-window tile (0 = whole image)");
  infer->add_option("--overlap", ia.overlap, "tile overlap (default tile/2)");
  infer->add_option("--threshold", ia.threshold);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "metrics over a dataset");
  eval->add_option("--data", ea.data, "dataset dir")->required();
  eval->add_option("--ckpt", ea.ckpt, "checkpoint")->required();
  eval->add_option("--csv", ea.csv, "output CSV ('-' = stdout)");
  eval->add_option("--threshold", ea.threshold);
  eval->add_option("--tile", ea.tile);
  eval->add_flag("--per-image", ea.per_image,
                 "macro-average per image instead of one global confusion");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "op/wall benchmarks");
  bench->add_option("--target", ba.target,
                    "wkv-recurrent|wkv-bidirectional|wkv-naive|full-model")
      ->required();
  bench->add_option("--sizes", ba.sizes, "ascending comma list");
  bench->add_option("--csv", ba.csv, "output CSV ('-' = stdout)");
  bench->add_option("--variant", ba.variant, "model variant for full-model");
  bench->add_option("--d", ba.d, "channel count for kernel targets");
  bench->add_option("--repeats", ba.repeats, "wall-time repeats");

  auto* selftest = app.add_subcommand("selftest", "fast oracle sanity suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return run_synth(sa);
    if (train->parsed()) return run_train(ta, train);
    if (infer->parsed()) return run_infer(ia);
    if (eval->parsed()) return run_eval(ea);
    if (bench->parsed()) return run_bench(ba);
    if (selftest->parsed()) return run_selftest_cmd();
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
