// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#include "crwkv/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <optional>
#include <sstream>

#include "crwkv/common.hpp"
#include "crwkv/io.hpp"

namespace crwkv {
namespace {

constexpr double kPi = 3.14159265358979323846;

struct Blob {
  bool ellipse = false;
  double cx = 0, cy = 0, rx = 1, ry = 1;  // rect half-extents or ellipse radii
  float color[3] = {0, 0, 0};

  bool covers(int64_t x, int64_t y) const {
    double dx = (double(x) + 0.5 - cx) / rx;
    double dy = (double(y) + 0.5 - cy) / ry;
    return ellipse ? (dx * dx + dy * dy <= 1.0)
                   : (std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0);
  }
};

void raster(const Blob& s, int64_t h, int64_t w, std::vector<uint8_t>& grid) {
  int64_t x0 = std::max<int64_t>(0, int64_t(std::floor(s.cx - s.rx - 1)));
  int64_t x1 = std::min<int64_t>(w, int64_t(std::ceil(s.cx + s.rx + 1)));
  int64_t y0 = std::max<int64_t>(0, int64_t(std::floor(s.cy - s.ry - 1)));
  int64_t y1 = std::min<int64_t>(h, int64_t(std::ceil(s.cy + s.ry + 1)));
  for (int64_t y = y0; y < y1; ++y)
    for (int64_t x = x0; x < x1; ++x)
      if (s.covers(x, y)) grid[size_t(y * w + x)] = 1;
}

bool overlaps(const Blob& s, int64_t h, int64_t w,
              const std::vector<uint8_t>& occupied) {
  int64_t x0 = std::max<int64_t>(0, int64_t(std::floor(s.cx - s.rx - 1)));
  int64_t x1 = std::min<int64_t>(w, int64_t(std::ceil(s.cx + s.rx + 1)));
  int64_t y0 = std::max<int64_t>(0, int64_t(std::floor(s.cy - s.ry - 1)));
  int64_t y1 = std::min<int64_t>(h, int64_t(std::ceil(s.cy + s.ry + 1)));
  for (int64_t y = y0; y < y1; ++y)
    for (int64_t x = x0; x < x1; ++x)
      if (s.covers(x, y) && occupied[size_t(y * w + x)]) return true;
  return false;
}

Blob random_blob(Rng& rng, int64_t h, int64_t w, const float bg[3]) {
  Blob s;
  s.ellipse = rng.uniform() < 0.5;
  double rmax = double(std::min(h, w)) / 4.0;
  s.rx = rng.uniform(4.0, rmax);
  s.ry = rng.uniform(4.0, rmax);
  s.cx = rng.uniform(s.rx, double(w) - s.rx);
  s.cy = rng.uniform(s.ry, double(h) - s.ry);
  for (int c = 0; c < 3; ++c) {
    // Guaranteed contrast: step at least 0.25 away from the background,
    // toward whichever side has room.
    double delta = rng.uniform(0.25, 0.5);
    s.color[c] = float(bg[c] < 0.5 ? bg[c] + delta : bg[c] - delta);
  }
  return s;
}

void paint(Tensor& img, const Blob& s) {
  int64_t h = img.dim(1), w = img.dim(2);
  auto d = img.mutable_data<float>();
  int64_t x0 = std::max<int64_t>(0, int64_t(std::floor(s.cx - s.rx - 1)));
  int64_t x1 = std::min<int64_t>(w, int64_t(std::ceil(s.cx + s.rx + 1)));
  int64_t y0 = std::max<int64_t>(0, int64_t(std::floor(s.cy - s.ry - 1)));
  int64_t y1 = std::min<int64_t>(h, int64_t(std::ceil(s.cy + s.ry + 1)));
  for (int64_t y = y0; y < y1; ++y)
    for (int64_t x = x0; x < x1; ++x)
      if (s.covers(x, y))
        for (int64_t c = 0; c < 3; ++c)
          d[size_t(c * h * w + y * w + x)] = s.color[c];
}

}  // namespace

ChangeSample synth_sample(const SynthOptions& opt, uint64_t seed) {
  if (opt.height <= 0 || opt.width <= 0 || opt.height % 16 || opt.width % 16)
    throw ConfigError("synth: height/width must be positive multiples of 16");
  if (opt.difficulty < 0 || opt.difficulty > 3)
    throw ConfigError("synth: difficulty must be in [0,3]");
  if (opt.min_shapes < 0 || opt.max_shapes < opt.min_shapes ||
      opt.min_changes < 0 || opt.max_changes < opt.min_changes)
    throw ConfigError("synth: bad shape/change counts");

  Rng rng(seed);
  int64_t h = opt.height, w = opt.width;
  ChangeSample out;
  out.seed = seed;
  out.a = Tensor::zeros({3, h, w}, Dtype::F32);
  out.b = Tensor::zeros({3, h, w}, Dtype::F32);
  out.mask = Tensor::zeros({h, w}, Dtype::F32);

  // Shared background: flat base color plus (difficulty > 0) a couple of
  // low-frequency gratings per channel.
  float bg[3];
  for (auto& c : bg) c = float(rng.uniform(0.2, 0.8));
  double tex_amp = opt.difficulty > 0 ? 0.03 + 0.02 * opt.difficulty : 0.0;
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<std::array<Wave, 2>> waves(3);
  for (auto& pair : waves)
    for (auto& wv : pair) {
      wv.fx = rng.uniform(0.5, 3.0) * 2.0 * kPi / double(w);
      wv.fy = rng.uniform(0.5, 3.0) * 2.0 * kPi / double(h);
      wv.phase = rng.uniform(0.0, 2.0 * kPi);
      wv.amp = tex_amp * rng.uniform(0.5, 1.0);
    }
  {
    auto da = out.a.mutable_data<float>();
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          double v = bg[c];
          for (const Wave& wv : waves[size_t(c)])
            v += wv.amp *
                 std::sin(wv.fx * double(x) + wv.fy * double(y) + wv.phase);
          da[size_t(c * h * w + y * w + x)] = float(v);
        }
    auto db = out.b.mutable_data<float>();
    std::copy(da.begin(), da.end(), db.begin());
  }

  // Blob placement.  Common blobs paint into both images; change blobs are
  // rejection-sampled to stay clear of everything already placed, which
  // keeps the mask exactly equal to the painted difference.
  std::vector<uint8_t> occupied(size_t(h * w), 0);
  auto place = [&](bool must_be_clear, int attempts) -> std::optional<Blob> {
    for (int k = 0; k < attempts; ++k) {
      Blob s = random_blob(rng, h, w, bg);
      if (!must_be_clear || !overlaps(s, h, w, occupied)) return s;
    }
    return std::nullopt;
  };

  int n_common = opt.min_shapes +
                 int(rng.uniform_int(opt.max_shapes - opt.min_shapes + 1));
  int n_changes = opt.min_changes +
                  int(rng.uniform_int(opt.max_changes - opt.min_changes + 1));
  if (opt.force_no_change) n_changes = 0;
  if (opt.force_single_addition) n_changes = 1;

  for (int i = 0; i < n_common; ++i) {
    if (auto s = place(false, 1)) {
      paint(out.a, *s);
      paint(out.b, *s);
      raster(*s, h, w, occupied);
    }
  }
  std::vector<uint8_t> changed(size_t(h * w), 0);
  for (int i = 0; i < n_changes; ++i) {
    auto s = place(true, 40);
    if (!s) continue;  // crowded image; fewer changes is fine
    bool addition = opt.force_single_addition || rng.uniform() < 0.5;
    paint(addition ? out.b : out.a, *s);
    raster(*s, h, w, occupied);
    raster(*s, h, w, changed);
  }
  {
    auto dm = out.mask.mutable_data<float>();
    for (size_t i = 0; i < changed.size(); ++i)
      dm[i] = changed[i] ? 1.0f : 0.0f;
  }

  // Photometric jitter between acquisitions (difficulty >= 2): global gain
  // and offset on the second image only.  The mask does not change.
  if (opt.difficulty >= 2) {
    double gain = 1.0 + rng.uniform(-0.05, 0.05) * (opt.difficulty - 1);
    double offset = rng.uniform(-0.03, 0.03) * (opt.difficulty - 1);
    auto db = out.b.mutable_data<float>();
    for (auto& v : db) v = float(double(v) * gain + offset);
  }

  // Independent per-pixel noise on each image.
  if (opt.difficulty > 0) {
    double amp = 0.02 * opt.difficulty;
    for (Tensor* img : {&out.a, &out.b}) {
      auto d = img->mutable_data<float>();
      for (auto& v : d) v = float(double(v) + rng.uniform(-amp, amp));
    }
  }
  for (Tensor* img : {&out.a, &out.b}) {
    auto d = img->mutable_data<float>();
    for (auto& v : d) v = std::clamp(v, 0.0f, 1.0f);
  }
  return out;
}

std::vector<ChangeSample> synth_generate(int count, const SynthOptions& opt,
                                         uint64_t seed) {
  std::vector<ChangeSample> out(size_t(std::max(count, 0)));
  Rng master(seed);
  // Per-sample seeds come from independent fork streams so results do not
  // depend on generation order (samples may be built by a worker pool).
  std::vector<uint64_t> seeds(out.size());
  for (size_t i = 0; i < out.size(); ++i) seeds[i] = master.fork(i).next_u64();
  parallel_for(int64_t(out.size()), [&](int64_t i) {
    out[size_t(i)] = synth_sample(opt, seeds[size_t(i)]);
  });
  return out;
}

namespace {

std::string sample_stem(const std::string& dir, size_t index) {
  std::ostringstream os;
  os << dir << "/";
  os.width(4);
  os.fill('0');
  os << index;
  return os.str();
}

}  // namespace

void write_dataset(const std::string& dir,
                   const std::vector<ChangeSample>& samples) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory: " + dir);
  for (size_t i = 0; i < samples.size(); ++i) {
    std::string stem = sample_stem(dir, i);
    io::write_png(stem + "_a.png", samples[i].a);
    io::write_png(stem + "_b.png", samples[i].b);
    io::write_png(stem + "_mask.png", samples[i].mask);
  }
  std::ostringstream man;
  man << "count=" << samples.size() << "\n";
  io::write_text_file(dir + "/manifest.txt", man.str());
}

std::vector<ChangeSample> load_dataset(const std::string& dir) {
  auto kv = io::parse_kv(io::read_text_file(dir + "/manifest.txt"));
  auto it = kv.find("count");
  if (it == kv.end()) throw IoError("dataset manifest missing count: " + dir);
  size_t count = size_t(std::stoll(it->second));
  std::vector<ChangeSample> out(count);
  for (size_t i = 0; i < count; ++i) {
    std::string stem = sample_stem(dir, i);
    out[i].a = io::read_png(stem + "_a.png");
    out[i].b = io::read_png(stem + "_b.png");
    Tensor m = io::read_png(stem + "_mask.png");
    out[i].mask = m.view({m.dim(1), m.dim(2)});
    if (out[i].a.dim(0) != 3 || out[i].b.dim(0) != 3)
      throw IoError("dataset images must be RGB: " + stem);
  }
  return out;
}

}  // namespace crwkv
