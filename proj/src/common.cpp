// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#include "crwkv/common.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace crwkv {

Dtype dtype_from_name(const std::string& s) {
  if (s == "f32") return Dtype::F32;
  if (s == "f64") return Dtype::F64;
  if (s == "u8") return Dtype::U8;
  throw ConfigError("unknown dtype: " + s);
}

namespace opcount {
namespace {
thread_local uint64_t g_ops = 0;
}
void add(uint64_t n) { g_ops += n; }
uint64_t total() { return g_ops; }
void reset() { g_ops = 0; }
}  // namespace opcount

namespace memstat {
namespace {
std::atomic<int64_t> g_live{0};
std::atomic<int64_t> g_peak{0};
}  // namespace

void on_alloc(int64_t bytes) {
  int64_t live = g_live.fetch_add(bytes) + bytes;
  int64_t peak = g_peak.load();
  while (live > peak && !g_peak.compare_exchange_weak(peak, live)) {
  }
}
void on_free(int64_t bytes) { g_live.fetch_sub(bytes); }
int64_t live_bytes() { return g_live.load(); }
int64_t peak_bytes() { return g_peak.load(); }
void reset_peak() { g_peak.store(g_live.load()); }
}  // namespace memstat

int worker_count() {
  if (const char* env = std::getenv("CRWKV_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : int(hw);
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  int workers = worker_count();
  if (workers <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  if (workers > n) workers = int(n);
  std::atomic<int64_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(size_t(workers));
  for (int wi = 0; wi < workers; ++wi) {
    pool.emplace_back([&] {
      for (int64_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace crwkv
