// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace crwkv {

// Error taxonomy. Validation problems (bad shapes, bad config, bad files)
// map to CLI exit code 1; numeric breakdowns (NaN loss, overflow) map to 2.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Dtype : uint8_t { F32 = 0, F64 = 1, U8 = 2 };

inline size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::F32: return 4;
    case Dtype::F64: return 8;
    case Dtype::U8: return 1;
  }
  return 0;
}

inline const char* dtype_name(Dtype d) {
  switch (d) {
    case Dtype::F32: return "f32";
    case Dtype::F64: return "f64";
    case Dtype::U8: return "u8";
  }
  return "?";
}

Dtype dtype_from_name(const std::string& s);

// ---------------------------------------------------------------------------
// Instrumentation.
//
// opcount: thread-local arithmetic-operation counter.  Kernels add a
// closed-form count per call so two runs of the same workload report the
// same number regardless of timing.  Used by the bench subcommand and the
// scaling checks.
//
// memstat: global live-byte / peak-byte accounting for tensor payloads.
// ---------------------------------------------------------------------------
namespace opcount {
void add(uint64_t n);
uint64_t total();
void reset();
}  // namespace opcount

namespace memstat {
void on_alloc(int64_t bytes);
void on_free(int64_t bytes);
int64_t live_bytes();
int64_t peak_bytes();
void reset_peak();
}  // namespace memstat

// Worker cap for the few embarrassingly-parallel paths (dataset synthesis,
// tiled inference).  Resolution order: CRWKV_THREADS env var, then hardware
// concurrency.  Results never depend on the worker count.
int worker_count();
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace crwkv
