#include "healthpoint/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

namespace hp {
namespace {

void check(std::span<const double> scores, std::span<const int> labels, std::size_t& pos, std::size_t& neg) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument(std::to_string(scores.size()) + " scores for " + std::to_string(labels.size()) +
                                " labels");
  }
  pos = neg = 0;
  for (int y : labels) (y ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw MetricError("metrics need both classes; labels hold only one");
}

// Indices ordered by descending score; equal scores keep input order.
std::vector<std::size_t> by_score_desc(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  std::size_t pos, neg;
  check(scores, labels, pos, neg);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  // Sum of positive ranks; tied runs share their average rank.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) rank_sum += avg;
    }
    i = j;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
  std::size_t pos, neg;
  check(scores, labels, pos, neg);
  const auto order = by_score_desc(scores);
  double ap = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t new_tp = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      new_tp += labels[order[j]] ? 1 : 0;
      ++j;
    }
    tp += new_tp;
    seen = j;
    if (new_tp) {
      const double precision = static_cast<double>(tp) / static_cast<double>(seen);
      ap += static_cast<double>(new_tp) / static_cast<double>(pos) * precision;
    }
    i = j;
  }
  return ap;
}

double f1_score(std::span<const double> scores, std::span<const int> labels, double threshold) {
  if (scores.size() != labels.size()) throw std::invalid_argument("f1_score: size mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (predicted && labels[i]) ++tp;
    else if (predicted) ++fp;
    else if (labels[i]) ++fn;
  }
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

Metrics compute_metrics(std::span<const double> scores, std::span<const int> labels) {
  return Metrics{auroc(scores, labels), auprc(scores, labels), f1_score(scores, labels)};
}

}  // namespace hp
