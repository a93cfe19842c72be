// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#include "crwkv/bench.hpp"

#include <algorithm>
#include <chrono>
#include <new>
#include <ostream>

#include "crwkv/model.hpp"
#include "crwkv/wkv.hpp"

namespace crwkv {
namespace {

uint64_t median_ns(std::vector<uint64_t> v) {
  std::sort(v.begin(), v.end());
  return v.empty() ? 0 : v[v.size() / 2];
}

template <typename Fn>
void timed(Fn&& fn, int repeats, uint64_t& ops_out, uint64_t& wall_out) {
  opcount::reset();
  fn();
  ops_out = opcount::total();
  std::vector<uint64_t> times;
  times.reserve(size_t(repeats));
  for (int r = 0; r < repeats; ++r) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    auto t1 = std::chrono::steady_clock::now();
    times.push_back(uint64_t(
        std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
  }
  wall_out = median_ns(std::move(times));
}

}  // namespace

KernelBenchRow bench_kernel_once(const std::string& kernel, int64_t t,
                                 int64_t d, int repeats) {
  if (t <= 0 || d <= 0) throw ConfigError("bench: T and d must be positive");
  if (repeats < 1) throw ConfigError("bench: repeats must be >= 1");
  if (kernel != "recurrent" && kernel != "bidirectional" && kernel != "naive")
    throw ConfigError("bench: unknown kernel '" + kernel +
                      "' (expected recurrent|bidirectional|naive)");
  KernelBenchRow row;
  row.kernel = kernel;
  row.t = t;
  row.d = d;
  try {
    Rng rng(0xbe9c0de);
    Tensor k = Tensor::uniform({t, d}, rng, -1.0, 1.0);
    Tensor v = Tensor::uniform({t, d}, rng, -1.0, 1.0);
    wkv::WkvParams p{Tensor::uniform({d}, rng, 0.05, 1.0),
                     Tensor::uniform({d}, rng, -0.5, 0.5)};
    auto run = [&] {
      if (kernel == "recurrent")
        wkv::recurrent(k, v, p);
      else if (kernel == "bidirectional")
        wkv::bidirectional(k, v, p);
      else
        wkv::naive(k, v, p, true);
    };
    timed(run, repeats, row.ops, row.wall_ns);
  } catch (const std::bad_alloc&) {
    row.truncated = true;
  }
  return row;
}

std::vector<KernelBenchRow> bench_kernels(const std::string& kernel,
                                          std::span<const int64_t> sizes,
                                          int64_t d, int repeats) {
  std::vector<KernelBenchRow> rows;
  rows.reserve(sizes.size());
  for (int64_t t : sizes)
    rows.push_back(bench_kernel_once(kernel, t, d, repeats));
  return rows;
}

ModelBenchRow bench_model_once(const ModelConfig& cfg, int64_t resolution,
                               int repeats) {
  if (resolution <= 0 || resolution % 16 != 0)
    throw ConfigError("bench: resolution must be a positive multiple of 16");
  if (repeats < 1) throw ConfigError("bench: repeats must be >= 1");
  ModelBenchRow row;
  row.model = cfg.variant;
  row.resolution = resolution;
  try {
    ChangeDetector model = ChangeDetector::build(cfg, 7);
    Rng rng(0xbe9c0de);
    Tensor a = Tensor::uniform({cfg.in_channels, resolution, resolution}, rng,
                               0.0, 1.0);
    Tensor b = Tensor::uniform({cfg.in_channels, resolution, resolution}, rng,
                               0.0, 1.0);
    memstat::reset_peak();
    timed([&] { model.forward(a, b); }, repeats, row.ops, row.wall_ns);
    row.peak_bytes = memstat::peak_bytes();
  } catch (const std::bad_alloc&) {
    row.truncated = true;
  }
  return row;
}

void write_kernel_csv(std::ostream& out, std::span<const KernelBenchRow> rows) {
  out << "kernel,T,d,ops,wall_ns\n";
  for (const auto& r : rows) {
    if (r.truncated)
      out << "# truncated (out of memory): " << r.kernel << " T=" << r.t
          << " d=" << r.d << "\n";
    else
      out << r.kernel << ',' << r.t << ',' << r.d << ',' << r.ops << ','
          << r.wall_ns << "\n";
  }
}

void write_model_csv(std::ostream& out, std::span<const ModelBenchRow> rows) {
  out << "model,resolution,ops,wall_ns,peak_bytes\n";
  for (const auto& r : rows) {
    if (r.truncated)
      out << "# truncated (out of memory): " << r.model
          << " resolution=" << r.resolution << "\n";
    else
      out << r.model << ',' << r.resolution << ',' << r.ops << ','
          << r.wall_ns << ',' << r.peak_bytes << "\n";
  }
}

}  // namespace crwkv
