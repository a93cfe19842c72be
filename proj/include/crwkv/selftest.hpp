// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#pragma once

#include <string>
#include <vector>

namespace crwkv {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Fast end-to-end sanity suite (kernel oracles, gradient spot checks, loss
// identities, serialization round-trip).  Runs in a few seconds.
std::vector<CheckResult> run_selftest();

}  // namespace crwkv
