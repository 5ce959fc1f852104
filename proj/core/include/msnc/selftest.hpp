#pragma once

// Built-in health checks behind `msnc selftest`: gradient verification by
// central differences, attention-equivalence oracles, and rANS round-trip
// fuzzing. All suites run at 64-bit precision.

#include <string>
#include <vector>

namespace msnc {

struct SelftestResult {
  int passed = 0;
  int failed = 0;
  std::vector<std::string> lines;

  bool ok() const { return failed == 0; }
  void merge(const SelftestResult& other) {
    passed += other.passed;
    failed += other.failed;
    lines.insert(lines.end(), other.lines.begin(), other.lines.end());
  }
};

SelftestResult selftest_grad();
SelftestResult selftest_oracle();
SelftestResult selftest_rans();
SelftestResult selftest_all();

}  // namespace msnc
