#include "bench.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <tuple>
#include <ostream>
#include <vector>

#include "healthpoint/coupling.hpp"

namespace hp::tools {

bool run_bench(std::ostream& out, std::size_t pairs) {
  const std::vector<std::size_t> widths{2, 3, 4}, dim_counts{1, 2, 3, 4}, ranks{1, 2, 4, 8};
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, CouplingBench> rows;
  char line[256];
  std::snprintf(line, sizeof line, "%2s %3s %2s %14s %14s %14s %12s %12s\n", "d", "|D|", "R", "coupled_ops",
                "oracle_ops", "oracle_build", "couple_us", "oracle_us");
  out << line;
  for (auto d : widths) {
    for (auto nd : dim_counts) {
      for (auto r : ranks) {
        const CouplingBench b = benchmark_coupling(d, r, nd, pairs, 17 * d + 5 * nd + r);
        rows[{d, nd, r}] = b;
        std::snprintf(line, sizeof line, "%2zu %3zu %2zu %14.1f %14.1f %14.1f %12.3f %12.3f\n", d, nd, r,
                      b.coupled_ops_per_pair, b.oracle_ops_per_pair, b.oracle_materialize_ops,
                      1e6 * b.couple_seconds / static_cast<double>(pairs),
                      1e6 * b.oracle_seconds / static_cast<double>(pairs));
        out << line;
      }
    }
  }

  bool ok = true;
  // Coupled ops against R * d * |D| over the whole sweep.
  std::vector<double> x, y;
  for (const auto& [key, b] : rows) {
    const auto [d, nd, r] = key;
    x.push_back(static_cast<double>(r * d * nd));
    y.push_back(b.coupled_ops_per_pair);
  }
  const LinearFit fit = fit_line(x, y);
  std::snprintf(line, sizeof line, "coupled ops ~ %.4f * R*d*|D| %+.4f, R^2 = %.6f\n", fit.slope, fit.intercept,
                fit.r_squared);
  out << line;
  ok = ok && fit.r_squared >= 0.98;

  // Linearity in R for every (d, |D|).
  double worst_r = 0.0;
  for (auto d : widths) {
    for (auto nd : dim_counts) {
      std::vector<double> rx, ry;
      for (auto r : ranks) {
        rx.push_back(static_cast<double>(r));
        ry.push_back(rows[{d, nd, r}].coupled_ops_per_pair);
      }
      const LinearFit f = fit_line(rx, ry);
      for (std::size_t i = 0; i < rx.size(); ++i) {
        const double pred = f.slope * rx[i] + f.intercept;
        worst_r = std::max(worst_r, std::abs(pred - ry[i]) / ry[i]);
      }
    }
  }
  std::snprintf(line, sizeof line, "coupled ops linear in R: worst relative residual %.3g%%\n", 100.0 * worst_r);
  out << line;
  ok = ok && worst_r <= 0.05;

  // Oracle growth per added dimension at R = 1.
  for (auto d : widths) {
    const double ratio = rows[{d, 4, 1}].oracle_ops_per_pair / rows[{d, 3, 1}].oracle_ops_per_pair;
    const double off = std::abs(ratio / static_cast<double>(d) - 1.0);
    std::snprintf(line, sizeof line, "oracle ops |D|=3 -> 4 at d=%zu: x%.3f (%.1f%% from d)\n", d, ratio, 100.0 * off);
    out << line;
    ok = ok && off <= 0.10;
  }
  out << (ok ? "scaling checks passed" : "scaling checks FAILED") << std::endl;
  return ok;
}

}  // namespace hp::tools
