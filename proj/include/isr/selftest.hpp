#pragma once

// Quick invariant checks run by `isrflow selftest`.

#include <string>
#include <vector>

namespace isr {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::vector<CheckResult> run_selftest();

}  // namespace isr
