#include "healthpoint/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "healthpoint/rng.hpp"

namespace hp {
namespace {

double evaluate(const LossFn& loss) {
  Tape tape;
  return loss(tape).item();
}

}  // namespace

GradCheckReport grad_check(const LossFn& loss, const std::vector<Parameter*>& params,
                           const GradCheckOptions& options) {
  std::vector<Tensor> saved_grads;
  for (Parameter* p : params) {
    saved_grads.push_back(p->grad);
    p->zero_grad();
  }
  double f0 = 0.0;
  {
    Tape tape;
    Var l = loss(tape);
    f0 = l.item();
    tape.backward(l);
  }
  std::vector<Tensor> analytic;
  for (std::size_t k = 0; k < params.size(); ++k) {
    analytic.push_back(params[k]->grad);
    params[k]->grad = saved_grads[k];
  }

  GradCheckReport report;
  report.abs_tol = options.abs_tol >= 0.0
                       ? options.abs_tol
                       : 100.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f0)) / options.step;
  Rng rng(options.seed);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter* p = params[k];
    const std::size_t n = p->value.size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (n > options.coords_per_param) {
      rng.shuffle(coords);
      coords.resize(options.coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double original = p->value[i];
      p->value[i] = original + options.step;
      const double up = evaluate(loss);
      p->value[i] = original - options.step;
      const double down = evaluate(loss);
      p->value[i] = original;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[k][i];
      // rel <= rel_tol  <=>  |a - numeric| <= rel_tol * max(|a|, |numeric|) + abs_tol.
      const double scale = std::max(std::abs(a), std::abs(numeric)) + report.abs_tol / options.rel_tol;
      const double rel = scale > 0.0 ? std::abs(a - numeric) / scale : 0.0;
      GradCheckEntry entry{p->name, i, a, numeric, rel};
      ++report.checked;
      report.max_rel_error = std::max(report.max_rel_error, rel);
      if (!(rel <= options.rel_tol)) {
        report.passed = false;
        report.failures.push_back(entry);
      }
      report.worst.push_back(std::move(entry));
    }
  }
  std::stable_sort(report.worst.begin(), report.worst.end(),
                   [](const auto& a, const auto& b) { return a.rel_error > b.rel_error; });
  if (report.worst.size() > 10) report.worst.resize(10);
  return report;
}

}  // namespace hp
