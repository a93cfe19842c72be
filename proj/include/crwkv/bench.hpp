// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "crwkv/encoder.hpp"

namespace crwkv {

struct KernelBenchRow {
  std::string kernel;  // recurrent | bidirectional | naive
  int64_t t = 0;
  int64_t d = 0;
  uint64_t ops = 0;
  uint64_t wall_ns = 0;
  bool truncated = false;  // out-of-memory: partial row
};

struct ModelBenchRow {
  std::string model;
  int64_t resolution = 0;
  uint64_t ops = 0;  // instrumented count, one forward
  uint64_t wall_ns = 0;
  int64_t peak_bytes = 0;
  bool truncated = false;
};

// Instrumented op counts are exact and repeatable; wall times are the median
// of `repeats` runs.  Inputs are seeded and identical across calls.
KernelBenchRow bench_kernel_once(const std::string& kernel, int64_t t,
                                 int64_t d, int repeats);
std::vector<KernelBenchRow> bench_kernels(const std::string& kernel,
                                          std::span<const int64_t> sizes,
                                          int64_t d, int repeats);
ModelBenchRow bench_model_once(const ModelConfig& cfg, int64_t resolution,
                               int repeats);

// CSV: "kernel,T,d,ops,wall_ns" / "model,resolution,ops,wall_ns,peak_bytes".
// Truncated rows become trailing comment lines.
void write_kernel_csv(std::ostream& out, std::span<const KernelBenchRow> rows);
void write_model_csv(std::ostream& out, std::span<const ModelBenchRow> rows);

}  // namespace crwkv
