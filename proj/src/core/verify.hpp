#pragma once

#include <cstdint>
#include <string>

namespace sprig {

struct VerifyReport {
  bool passed = true;
  std::string text;
};

// Randomized property suites behind `verify`: suite is one of
// "tabular", "gradients", "gae", "all". Hermetic and bounded runtime.
VerifyReport run_verify_suite(const std::string& suite, uint64_t master_seed);

}  // namespace sprig
