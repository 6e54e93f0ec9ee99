// Invariant sweep behind `hp selftest`.

#ifndef HP_TOOLS_SELFTEST_HPP
#define HP_TOOLS_SELFTEST_HPP

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace hp::tools {

/// Deliberate corruptions used to confirm that each check can fail.
enum class Fault { none, coupling, gradient, neighborhood, mask, recovery };

Fault parse_fault(const std::string& name);

struct CheckResult {
  std::string name;
  bool passed = true;
  std::string detail;
  double seconds = 0.0;
};

/// Runs every check, printing one line per check to `log` as it completes.
std::vector<CheckResult> run_selftest(Fault fault, std::uint64_t seed, std::ostream& log);

}  // namespace hp::tools

#endif  // HP_TOOLS_SELFTEST_HPP
