#ifndef HEALTHPOINT_GRADCHECK_HPP
#define HEALTHPOINT_GRADCHECK_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "healthpoint/autodiff.hpp"

namespace hp {

struct GradCheckOptions {
  double step = 1e-5;
  double rel_tol = 1e-4;
  /// Coordinates sampled per parameter; all coordinates when the parameter is smaller.
  std::size_t coords_per_param = 16;
  std::uint64_t seed = 0;
  /// Absolute slack added to the relative test. Negative: derived from the rounding
  /// resolution of the difference quotient, 100 * eps * max(1, |f|) / step.
  double abs_tol = -1.0;
};

struct GradCheckEntry {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  bool passed = true;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double abs_tol = 0.0;  ///< Slack actually used.
  /// Largest relative errors first.
  std::vector<GradCheckEntry> worst;
  std::vector<GradCheckEntry> failures;
};

/// Builds a scalar loss on the given tape from the current parameter values.
using LossFn = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients with central differences
/// (f(p+h) - f(p-h)) / 2h. A coordinate passes when
///   |analytic - numeric| <= rel_tol * max(|analytic|, |numeric|) + abs_tol,
/// so gradients that are zero up to rounding (e.g. a logit offset under softmax)
/// are judged against the resolution of the difference quotient.
GradCheckReport grad_check(const LossFn& loss, const std::vector<Parameter*>& params,
                           const GradCheckOptions& options = {});

}  // namespace hp

#endif  // HEALTHPOINT_GRADCHECK_HPP
