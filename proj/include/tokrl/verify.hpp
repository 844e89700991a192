#pragma once

// Property suites behind `tokrl verify`: exact-DP consistency, discrepancy
// closed forms, finite-difference gradients and target telescoping.

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace tokrl {

struct CheckResult {
  std::string suite;
  std::string name;
  std::string relation;  // "<=" (observed at most tolerance) or ">="
  double tolerance = 0.0;
  double observed = 0.0;
  bool pass = false;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  bool ok() const noexcept;
  std::size_t failures() const noexcept;
};

const std::vector<std::string>& verify_suites();  // consistency, discrepancy, gradients, telescoping

// `suite` is one of verify_suites() or "all"; UsageError otherwise.
VerifyReport verify(std::string_view suite, std::uint64_t seed = 7);

void write_report(std::ostream& out, const VerifyReport& report);

}  // namespace tokrl
