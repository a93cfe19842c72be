// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#pragma once

#include <cmath>
#include <cstdint>

namespace crwkv {

// Deterministic generator with a fixed bit-level contract.  The standard
// <random> distributions are implementation-defined, which would break the
// "same seed, same bytes" guarantees, so the uniform/normal transforms are
// spelled out here.  Core is splitmix64.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int64_t uniform_int(int64_t n) {
    return n <= 0 ? 0 : int64_t(uniform() * double(n)) % n;
  }

  // Box-Muller; second variate cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Independent child stream; used so per-sample generators do not depend
  // on generation order (and therefore on worker count).
  Rng fork(uint64_t stream) const {
    Rng r(state_ ^ (0x9e3779b97f4a7c15ull * (stream + 0x632be59bd9b4e019ull)));
    r.next_u64();
    return r;
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace crwkv
