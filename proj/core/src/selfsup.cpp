#include "healthpoint/selfsup.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace hp {

FgaPairs fga_pairs(const PointCloud& h2, const FgaConfig& config) {
  const std::size_t n = h2.size();
  std::vector<std::uint8_t> valid(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto m = h2.modality[i];
    const bool excluded = std::find(config.excluded.begin(), config.excluded.end(), m) != config.excluded.end();
    valid[i] = h2.observed(h2.case_index[i], m) && !excluded;
  }
  std::map<double, std::vector<std::uint32_t>> at_time;
  for (std::size_t i = 0; i < n; ++i) {
    if (valid[i]) at_time[h2.time[i]].push_back(static_cast<std::uint32_t>(i));
  }
  FgaPairs pairs;
  std::vector<std::uint32_t> pos, neg;
  for (std::size_t i = 0; i < n; ++i) {
    if (!valid[i]) continue;
    pos.clear();
    neg.clear();
    for (auto j : at_time[h2.time[i]]) {
      if (h2.modality[j] == h2.modality[i]) continue;
      (h2.case_index[j] == h2.case_index[i] ? pos : neg).push_back(j);
    }
    if (pos.empty()) continue;
    pairs.anchors.push_back(static_cast<std::uint32_t>(i));
    pairs.positives.push_row(pos);
    pairs.negatives.push_row(neg);
  }
  return pairs;
}

Var fga_loss(Tape& tape, const PointCloud& h2, const FgaConfig& config) {
  if (!(config.temperature > 0.0)) throw std::invalid_argument("alignment temperature must be positive");
  const FgaPairs pairs = fga_pairs(h2, config);
  if (pairs.anchors.empty()) return tape.constant(Tensor::scalar(0.0));
  const Var unit = ops::l2_normalize_rows(h2.tokens);

  std::vector<std::uint32_t> all_a, all_b, pos_a, pos_b;
  Csr all_seg, pos_seg;
  for (std::size_t k = 0; k < pairs.anchors.size(); ++k) {
    const auto i = pairs.anchors[k];
    for (auto j : pairs.positives.row(k)) {
      all_a.push_back(i);
      all_b.push_back(j);
      pos_a.push_back(i);
      pos_b.push_back(j);
    }
    for (auto j : pairs.negatives.row(k)) {
      all_a.push_back(i);
      all_b.push_back(j);
    }
    all_seg.offsets.push_back(all_a.size());
    pos_seg.offsets.push_back(pos_a.size());
  }
  all_seg.cols.resize(all_a.size());
  pos_seg.cols.resize(pos_a.size());
  const double inv_tau = 1.0 / config.temperature;
  const Var lse_all = ops::segment_logsumexp(ops::scale(ops::edge_dot(unit, unit, all_a, all_b), inv_tau), all_seg);
  const Var lse_pos = ops::segment_logsumexp(ops::scale(ops::edge_dot(unit, unit, pos_a, pos_b), inv_tau), pos_seg);
  return ops::mean(lse_all - lse_pos);
}

Var fgr_loss(Tape& tape, Var hhat, const PointCloud& h4bar, const FgrOptions& options) {
  if (hhat.shape() != h4bar.tokens.shape()) {
    throw ShapeError("reconstruction " + to_string(hhat.shape()) + " vs level-4 tokens " +
                     to_string(h4bar.tokens.shape()));
  }
  const Var target = options.detach_target ? tape.constant(h4bar.tokens.value()) : h4bar.tokens;
  const auto mask = h4bar.token_mask();
  std::vector<double> weights(mask.begin(), mask.end());
  std::size_t observed = 0;
  for (auto m : mask) observed += m;
  if (observed == 0) return tape.constant(Tensor::scalar(0.0));
  const Var diff = hhat - target;
  const Var total = ops::sum(ops::scale_rows(diff * diff, weights));
  const double count = static_cast<double>(observed * h4bar.width());
  return options.normalize ? ops::scale(total, 1.0 / count) : total;
}

Var recovery_update(const PointCloud& h4bar, Var hhat) {
  return ops::where_rows(h4bar.token_mask(), h4bar.tokens, hhat);
}

}  // namespace hp
