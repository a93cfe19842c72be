// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#include "crwkv/encoder.hpp"

#include <cmath>
#include <sstream>

namespace crwkv {

const char* fusion_name(Fusion f) {
  switch (f) {
    case Fusion::kCrossCbam: return "cross_cbam";
    case Fusion::kSiamDiff: return "siamdiff";
    case Fusion::kSiamConc: return "siamconc";
  }
  return "?";
}

Fusion fusion_from_name(const std::string& s) {
  if (s == "cross_cbam") return Fusion::kCrossCbam;
  if (s == "siamdiff") return Fusion::kSiamDiff;
  if (s == "siamconc") return Fusion::kSiamConc;
  throw ConfigError("unknown fusion '" + s +
                    "' (expected cross_cbam|siamdiff|siamconc)");
}

ModelConfig ModelConfig::variant_named(const std::string& name) {
  ModelConfig c;
  c.variant = name;
  if (name == "T") {
    c.dims = {32, 48, 96, 160};
    c.depths = {2, 2, 4, 2};
  } else if (name == "S") {
    c.dims = {32, 64, 128, 192};
    c.depths = {3, 3, 6, 3};
  } else if (name == "B") {
    c.dims = {48, 72, 144, 240};
    c.depths = {3, 3, 6, 3};
  } else if (name == "nano") {
    c.dims = {8, 12, 24, 40};
    c.depths = {1, 1, 2, 1};
  } else {
    throw ConfigError("unknown variant '" + name + "' (expected T|S|B|nano)");
  }
  return c;
}

namespace {

template <typename T, size_t N>
std::string join(const std::array<T, N>& a) {
  std::ostringstream os;
  for (size_t i = 0; i < N; ++i) {
    if (i) os << ',';
    os << a[i];
  }
  return os.str();
}

std::vector<int64_t> split_ints(const std::string& s, const std::string& key) {
  std::vector<int64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoll(item));
    } catch (const std::exception&) {
      throw ConfigError("config " + key + ": bad integer '" + item + "'");
    }
  }
  return out;
}

int64_t parse_i64(const std::string& s, const std::string& key) {
  try {
    return std::stoll(s);
  } catch (const std::exception&) {
    throw ConfigError("config " + key + ": bad integer '" + s + "'");
  }
}

bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw ConfigError("config " + key + ": bad bool '" + s + "'");
}

}  // namespace

std::string ModelConfig::to_kv() const {
  std::ostringstream os;
  os << "variant=" << variant << "\n";
  os << "dims=" << join(dims) << "\n";
  os << "depths=" << join(depths) << "\n";
  os << "in_channels=" << in_channels << "\n";
  os << "fusion=" << fusion_name(fusion) << "\n";
  os << "block_mlp_mix=" << (block_mlp_mix ? 1 : 0) << "\n";
  os << "sfm_mlp_mix=" << (sfm_mlp_mix ? 1 : 0) << "\n";
  os << "use_sfm=" << (use_sfm ? 1 : 0) << "\n";
  return os.str();
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  auto it = kv.find("variant");
  if (it != kv.end() && it->second != "custom") c = variant_named(it->second);
  if (it != kv.end()) c.variant = it->second;
  if ((it = kv.find("dims")) != kv.end()) {
    auto v = split_ints(it->second, "dims");
    if (v.size() != 4) throw ConfigError("config dims: expected 4 values");
    for (int i = 0; i < 4; ++i) {
      if (v[size_t(i)] <= 0) throw ConfigError("config dims: must be positive");
      c.dims[size_t(i)] = v[size_t(i)];
    }
  }
  if ((it = kv.find("depths")) != kv.end()) {
    auto v = split_ints(it->second, "depths");
    if (v.size() != 4) throw ConfigError("config depths: expected 4 values");
    for (int i = 0; i < 4; ++i) {
      if (v[size_t(i)] <= 0)
        throw ConfigError("config depths: must be positive");
      c.depths[size_t(i)] = int(v[size_t(i)]);
    }
  }
  if ((it = kv.find("in_channels")) != kv.end()) {
    c.in_channels = parse_i64(it->second, "in_channels");
    if (c.in_channels <= 0) throw ConfigError("config in_channels: must be positive");
  }
  if ((it = kv.find("fusion")) != kv.end())
    c.fusion = fusion_from_name(it->second);
  if ((it = kv.find("block_mlp_mix")) != kv.end())
    c.block_mlp_mix = parse_bool(it->second, "block_mlp_mix");
  if ((it = kv.find("sfm_mlp_mix")) != kv.end())
    c.sfm_mlp_mix = parse_bool(it->second, "sfm_mlp_mix");
  if ((it = kv.find("use_sfm")) != kv.end())
    c.use_sfm = parse_bool(it->second, "use_sfm");
  return c;
}

// ---------------------------------------------------------------------------
// Parameter construction.
// ---------------------------------------------------------------------------
namespace {

Tensor fan_in_uniform(Shape shape, int64_t fan_in, Rng& rng, Dtype dt) {
  double bound = 1.0 / std::sqrt(double(fan_in));
  return Tensor::uniform(std::move(shape), rng, -bound, bound, dt);
}

// Per-channel decay starts spread out: channel c decays by factor
// (c+1)*ln2 per step in log space, so early channels remember long range
// and later channels focus locally.
Tensor decay_init(int64_t d, Dtype dt) {
  Tensor t = Tensor::zeros({d}, dt);
  for (int64_t c = 0; c < d; ++c)
    t.set(c, std::log(std::log(2.0) * double(c + 1)));
  return t;
}

}  // namespace

EncoderLayout build_encoder(ParamStore& store, const ModelConfig& cfg, Rng& rng,
                            Dtype dt) {
  EncoderLayout lay{};
  lay.stem_w = store.add(
      "stem.w", fan_in_uniform({cfg.dims[0], cfg.in_channels, 3, 3},
                               cfg.in_channels * 9, rng, dt));
  lay.stem_b = store.add("stem.b", Tensor::zeros({cfg.dims[0]}, dt));
  for (int i = 0; i < 4; ++i) {
    int64_t d = cfg.dims[size_t(i)];
    for (int j = 0; j < cfg.depths[size_t(i)]; ++j) {
      std::string pre =
          "stage" + std::to_string(i + 1) + ".block" + std::to_string(j + 1) + ".";
      BlockLayout b{};
      b.ln1_g = store.add(pre + "ln1.gamma", Tensor::full({d}, 1.0, dt));
      b.ln1_b = store.add(pre + "ln1.beta", Tensor::zeros({d}, dt));
      b.ln2_g = store.add(pre + "ln2.gamma", Tensor::full({d}, 1.0, dt));
      b.ln2_b = store.add(pre + "ln2.beta", Tensor::zeros({d}, dt));
      b.mu_r = store.add(pre + "spatial.mu_r", Tensor::full({d}, 0.5, dt));
      b.mu_k = store.add(pre + "spatial.mu_k", Tensor::full({d}, 0.5, dt));
      b.mu_v = store.add(pre + "spatial.mu_v", Tensor::full({d}, 0.5, dt));
      b.w_r = store.add(pre + "spatial.w_r", fan_in_uniform({d, d}, d, rng, dt));
      b.w_k = store.add(pre + "spatial.w_k", fan_in_uniform({d, d}, d, rng, dt));
      b.w_v = store.add(pre + "spatial.w_v", fan_in_uniform({d, d}, d, rng, dt));
      b.w_o = store.add(pre + "spatial.w_o", fan_in_uniform({d, d}, d, rng, dt));
      b.decay = store.add(pre + "spatial.decay", decay_init(d, dt));
      b.bonus = store.add(pre + "spatial.bonus", Tensor::zeros({d}, dt));
      if (cfg.block_mlp_mix) {
        b.mlp_w1 = store.add(pre + "channel.w1",
                             fan_in_uniform({d, 4 * d}, d, rng, dt));
        b.mlp_w2 = store.add(pre + "channel.w2",
                             fan_in_uniform({4 * d, d}, 4 * d, rng, dt));
      } else {
        int64_t hidden = se_hidden_width(d);
        b.se_reduce = store.add(pre + "channel.reduce",
                                fan_in_uniform({d, hidden}, d, rng, dt));
        b.se_expand = store.add(pre + "channel.expand",
                                fan_in_uniform({hidden, d}, hidden, rng, dt));
      }
      lay.stages[size_t(i)].push_back(b);
    }
    if (i < 3) {
      std::string pre = "down" + std::to_string(i + 1) + ".";
      lay.down_w[size_t(i)] = store.add(
          pre + "w", fan_in_uniform({cfg.dims[size_t(i) + 1], d, 3, 3}, d * 9,
                                    rng, dt));
      lay.down_b[size_t(i)] =
          store.add(pre + "b", Tensor::zeros({cfg.dims[size_t(i) + 1]}, dt));
    }
  }
  return lay;
}

RwkvBlockParams block_params(const ParamStore& store, const BlockLayout& b,
                             bool mlp_mix) {
  RwkvBlockParams p;
  p.ln1 = {store.at(b.ln1_g), store.at(b.ln1_b)};
  p.ln2 = {store.at(b.ln2_g), store.at(b.ln2_b)};
  p.spatial.mu_r = store.at(b.mu_r);
  p.spatial.mu_k = store.at(b.mu_k);
  p.spatial.mu_v = store.at(b.mu_v);
  p.spatial.w_r = store.at(b.w_r);
  p.spatial.w_k = store.at(b.w_k);
  p.spatial.w_v = store.at(b.w_v);
  p.spatial.w_o = store.at(b.w_o);
  p.spatial.wkv.w = store.at(b.decay);
  p.spatial.wkv.u = store.at(b.bonus);
  p.mlp_mix = mlp_mix;
  if (mlp_mix) {
    p.mlp.w1 = store.at(b.mlp_w1);
    p.mlp.w2 = store.at(b.mlp_w2);
  } else {
    p.se.reduce = store.at(b.se_reduce);
    p.se.expand = store.at(b.se_expand);
  }
  return p;
}

FeaturePyramid encode(const ParamStore& store, const EncoderLayout& layout,
                      const ModelConfig& cfg, const Tensor& image) {
  if (image.ndim() != 3 || image.dim(0) != cfg.in_channels)
    throw ShapeError("encode: image must be [" +
                     std::to_string(cfg.in_channels) + ",H,W], got " +
                     shape_str(image.shape()));
  if (image.dim(1) % 16 != 0 || image.dim(2) % 16 != 0)
    throw ShapeError("encode: H and W must be divisible by 16, got " +
                     shape_str(image.shape()));
  FeaturePyramid pyr;
  Tensor x = conv2d(image, store.at(layout.stem_w), store.at(layout.stem_b),
                    2, 1);
  for (int i = 0; i < 4; ++i) {
    for (const BlockLayout& b : layout.stages[size_t(i)])
      x = rwkv_block(x, block_params(store, b, cfg.block_mlp_mix));
    pyr.f[size_t(i)] = x;
    if (i < 3)
      x = conv2d(x, store.at(layout.down_w[size_t(i)]),
                 store.at(layout.down_b[size_t(i)]), 2, 1);
  }
  return pyr;
}

}  // namespace crwkv
