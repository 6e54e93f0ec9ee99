#ifndef HEALTHPOINT_METRICS_HPP
#define HEALTHPOINT_METRICS_HPP

#include <span>
#include <stdexcept>

namespace hp {

struct Metrics {
  double auroc = 0.0;
  double auprc = 0.0;
  double f1 = 0.0;
};

/// Raised when the labels hold a single class.
class MetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Mann-Whitney statistic with average ranks for tied scores.
double auroc(std::span<const double> scores, std::span<const int> labels);
/// Average precision: sum over distinct thresholds of (recall step) x precision.
double auprc(std::span<const double> scores, std::span<const int> labels);
/// F1 of the rule score >= threshold; 0 when there are no true positives.
double f1_score(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

Metrics compute_metrics(std::span<const double> scores, std::span<const int> labels);

}  // namespace hp

#endif  // HEALTHPOINT_METRICS_HPP
