// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#include "crwkv/infer.hpp"

#include <algorithm>
#include <cmath>

#include "crwkv/io.hpp"

namespace crwkv {
namespace {

// Triangle-wave index reflection; handles pads wider than the source.
int64_t reflect_index(int64_t i, int64_t n) {
  if (n == 1) return 0;
  int64_t period = 2 * (n - 1);
  int64_t m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

Tensor reflect_pad(const Tensor& x, int64_t out_h, int64_t out_w) {
  int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out = Tensor::zeros({c, out_h, out_w}, x.dtype());
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < out_h; ++y) {
      int64_t sy = reflect_index(y, h);
      for (int64_t xx = 0; xx < out_w; ++xx)
        out.set(ch * out_h * out_w + y * out_w + xx,
                x.at(ch * h * w + sy * w + reflect_index(xx, w)));
    }
  return out;
}

Tensor crop_chw(const Tensor& x, int64_t y0, int64_t x0, int64_t th,
                int64_t tw) {
  int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out = Tensor::zeros({c, th, tw}, x.dtype());
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < th; ++y)
      for (int64_t xx = 0; xx < tw; ++xx)
        out.set(ch * th * tw + y * tw + xx,
                x.at(ch * h * w + (y0 + y) * w + (x0 + xx)));
  return out;
}

std::vector<int64_t> tile_starts(int64_t extent, int64_t tile, int64_t stride) {
  std::vector<int64_t> starts;
  for (int64_t s = 0; s + tile < extent; s += stride) starts.push_back(s);
  starts.push_back(extent - tile);  // always cover the far edge exactly
  return starts;
}

}  // namespace

Tensor tiled_inference(const ChangeDetector& model, const Tensor& a,
                       const Tensor& b, int64_t tile, int64_t overlap) {
  if (!same_shape(a.shape(), b.shape()) || a.ndim() != 3)
    throw ShapeError("tiled_inference: inputs must be matching [C,H,W]");
  if (tile <= 0 || tile % 16 != 0)
    throw ConfigError("tiled_inference: tile must be a positive multiple of 16");
  if (overlap < 0 || overlap >= tile)
    throw ConfigError("tiled_inference: overlap must be in [0, tile)");

  int64_t in_h = a.dim(1), in_w = a.dim(2);
  int64_t h = std::max(in_h, tile), w = std::max(in_w, tile);
  Tensor pa = (h == in_h && w == in_w) ? a : reflect_pad(a, h, w);
  Tensor pb = (h == in_h && w == in_w) ? b : reflect_pad(b, h, w);

  int64_t stride = tile - overlap;
  std::vector<int64_t> ys = tile_starts(h, tile, stride);
  std::vector<int64_t> xs = tile_starts(w, tile, stride);
  struct Job {
    int64_t y, x;
    Tensor prob;
  };
  std::vector<Job> jobs;
  for (int64_t y : ys)
    for (int64_t x : xs) jobs.push_back({y, x, Tensor()});

  // Tiles run under the worker pool; the per-pixel average is reduced
  // sequentially in tile order afterwards so the result never depends on
  // the worker count.
  parallel_for(int64_t(jobs.size()), [&](int64_t i) {
    Job& j = jobs[size_t(i)];
    j.prob = model.forward(crop_chw(pa, j.y, j.x, tile, tile),
                           crop_chw(pb, j.y, j.x, tile, tile));
  });

  std::vector<double> sum(size_t(h * w), 0.0);
  std::vector<int32_t> hits(size_t(h * w), 0);
  for (const Job& j : jobs)
    for (int64_t y = 0; y < tile; ++y)
      for (int64_t x = 0; x < tile; ++x) {
        size_t at = size_t((j.y + y) * w + (j.x + x));
        sum[at] += j.prob.at(y * tile + x);
        ++hits[at];
      }

  Tensor out = Tensor::zeros({in_h, in_w}, Dtype::F32);
  for (int64_t y = 0; y < in_h; ++y)
    for (int64_t x = 0; x < in_w; ++x) {
      size_t at = size_t(y * w + x);
      out.set(y * in_w + x, sum[at] / double(hits[at]));
    }
  return out;
}

ChangeDetector load_model(const std::string& checkpoint_path) {
  ParamStore loaded;
  std::string text = io::load_checkpoint(checkpoint_path, loaded);
  ModelConfig cfg = ModelConfig::from_kv(io::parse_kv(text));
  ChangeDetector model = ChangeDetector::build(cfg, 0);
  if (loaded.size() != model.params.size())
    throw IoError("checkpoint: expected " +
                  std::to_string(model.params.size()) + " tensors, found " +
                  std::to_string(loaded.size()));
  for (size_t i = 0; i < model.params.size(); ++i) {
    const std::string& name = model.params.name(int(i));
    int idx = loaded.find(name);
    if (idx < 0) throw IoError("checkpoint: missing parameter " + name);
    const Tensor& t = loaded.at(idx);
    if (!same_shape(t.shape(), model.params.at(int(i)).shape()))
      throw IoError("checkpoint: shape mismatch for " + name);
    model.params.at(int(i)) = t;
  }
  return model;
}

Tensor render_overlay(const Tensor& truth, const Tensor& pred,
                      double threshold) {
  if (!same_shape(truth.shape(), pred.shape()) || truth.ndim() != 2)
    throw ShapeError("render_overlay: expected matching [H,W] maps");
  int64_t h = truth.dim(0), w = truth.dim(1);
  Tensor out = Tensor::zeros({3, h, w}, Dtype::F32);
  auto d = out.mutable_data<float>();
  for (int64_t i = 0; i < h * w; ++i) {
    bool t = truth.at(i) > 0.5;
    bool p = pred.at(i) > threshold;
    float r = 0, g = 0, b = 0;
    if (t && p) r = g = b = 1;       // hit: white
    else if (!t && p) g = 1;         // false alarm: green
    else if (t && !p) r = 1;         // miss: red
    d[size_t(i)] = r;
    d[size_t(h * w + i)] = g;
    d[size_t(2 * h * w + i)] = b;
  }
  return out;
}

}  // namespace crwkv
