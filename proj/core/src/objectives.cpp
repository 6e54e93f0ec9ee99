#include "healthpoint/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace hp {

Var fuse_cases(const PointCloud& cloud) {
  std::vector<Var> columns;
  for (std::size_t m = 0; m < cloud.modalities; ++m) {
    std::vector<std::uint32_t> last(cloud.cases);
    for (std::size_t c = 0; c < cloud.cases; ++c) {
      const auto [b, e] = cloud.block(c, m);
      if (b == e) throw std::invalid_argument("fuse_cases: block (" + std::to_string(c) + ", " + std::to_string(m) + ") is empty");
      last[c] = static_cast<std::uint32_t>(e - 1);
    }
    columns.push_back(ops::gather_rows(cloud.tokens, last));
  }
  return ops::concat(columns, 1);
}

namespace {

Var zero(Tape& tape) { return tape.constant(Tensor::scalar(0.0)); }

// Sum (or mean) of cross-entropy over the selected rows of a logits table.
struct CeTerms {
  std::vector<Var> parts;
  std::size_t count = 0;

  void add(Var logits, const std::vector<std::uint32_t>& rows, const std::vector<int>& labels) {
    if (rows.empty()) return;
    parts.push_back(ops::sum(ops::softmax_cross_entropy(ops::gather_rows(logits, rows), labels)));
    count += rows.size();
  }
  Var reduce(Tape& tape, bool normalize) const {
    if (count == 0) return zero(tape);
    Var total = parts[0];
    for (std::size_t k = 1; k < parts.size(); ++k) total = total + parts[k];
    return normalize ? ops::scale(total, 1.0 / static_cast<double>(count)) : total;
  }
};

}  // namespace

SupervisedLosses supervised_losses(Tape& tape, const LayerOutputs& outputs, const EventBatch& batch,
                                   const Heads& heads, bool normalize) {
  const std::size_t C = batch.size(), M = batch.modalities();
  std::vector<std::uint32_t> labelled, complete;
  std::vector<int> labelled_y, complete_y;
  for (std::size_t c = 0; c < C; ++c) {
    if (!batch[c].label_observed) continue;
    labelled.push_back(static_cast<std::uint32_t>(c));
    labelled_y.push_back(batch[c].label);
    if (batch[c].fully_observed()) {
      complete.push_back(static_cast<std::uint32_t>(c));
      complete_y.push_back(batch[c].label);
    }
  }
  SupervisedLosses out;
  if (labelled.empty()) {
    out.global = out.fusion = out.unimodal = zero(tape);
    return out;
  }
  CeTerms g, f, s;
  g.add(heads.fusion.forward(tape, fuse_cases(outputs.h5bar)), labelled, labelled_y);
  if (!complete.empty()) f.add(heads.fusion.forward(tape, fuse_cases(outputs.h3bar)), complete, complete_y);

  const Var means = ops::segment_mean_rows(outputs.h2bar.tokens, outputs.h2bar.blocks());
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<std::uint32_t> rows;
    std::vector<int> y;
    for (auto c : labelled) {
      if (!batch[c].observed(m)) continue;
      rows.push_back(static_cast<std::uint32_t>(outputs.h2bar.block_id(c, m)));
      y.push_back(batch[c].label);
    }
    if (rows.empty()) continue;
    std::vector<std::uint32_t> all(rows.size());
    for (std::size_t k = 0; k < all.size(); ++k) all[k] = static_cast<std::uint32_t>(k);
    s.add(heads.modality[m].forward(tape, ops::gather_rows(means, rows)), all, y);
  }
  out.global = g.reduce(tape, normalize);
  out.fusion = f.reduce(tape, normalize);
  out.unimodal = s.reduce(tape, normalize);
  return out;
}

Var total_loss(Var global, Var fusion, Var unimodal, Var align, Var recon, const LossConfig& config) {
  return ((global + fusion) + unimodal) + ops::scale(align, config.lambda_a) + ops::scale(recon, config.lambda_r);
}

LossBreakdown compute_losses(Tape& tape, const LayerOutputs& outputs, const EventBatch& batch, const Heads& heads,
                             const LossConfig& config) {
  LossBreakdown b;
  const SupervisedLosses sup = supervised_losses(tape, outputs, batch, heads, config.normalize);
  b.global = sup.global;
  b.fusion = sup.fusion;
  b.unimodal = sup.unimodal;
  b.align = fga_loss(tape, outputs.h2bar, config.fga);
  b.recon = fgr_loss(tape, outputs.hhat, outputs.h4bar, FgrOptions{config.detach_target, config.normalize});
  b.total = total_loss(b.global, b.fusion, b.unimodal, b.align, b.recon, config);
  return b;
}

std::string branch_name(const BranchPrediction& p) {
  switch (p.kind) {
    case BranchKind::unimodal: return "modality" + std::to_string(p.modality);
    case BranchKind::cross_modal: return "cross_modal";
    case BranchKind::global: return "global";
  }
  return "?";
}

double binary_entropy(double p) {
  double h = 0.0;
  if (p > 0.0) h -= p * std::log(p);
  if (p < 1.0) h -= (1.0 - p) * std::log1p(-p);
  return h;
}

namespace {

double positive_probability(const Tensor& logits, std::size_t row) {
  const double a = logits.at(row, 0), b = logits.at(row, 1);
  const double mx = std::max(a, b);
  const double ea = std::exp(a - mx), eb = std::exp(b - mx);
  return eb / (ea + eb);
}

BranchPrediction make(BranchKind kind, std::size_t m, double p) {
  return BranchPrediction{kind, m, p, binary_entropy(p)};
}

}  // namespace

std::vector<std::vector<BranchPrediction>> branch_predictions(Tape& tape, const LayerOutputs& outputs,
                                                              const EventBatch& batch, const Heads& heads) {
  const std::size_t C = batch.size(), M = batch.modalities();
  const Tensor g = heads.fusion.forward(tape, fuse_cases(outputs.h5bar)).value();
  const Tensor f = heads.fusion.forward(tape, fuse_cases(outputs.h3bar)).value();
  const Var means = ops::segment_mean_rows(outputs.h2bar.tokens, outputs.h2bar.blocks());
  std::vector<Tensor> uni;
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<std::uint32_t> rows(C);
    for (std::size_t c = 0; c < C; ++c) rows[c] = static_cast<std::uint32_t>(outputs.h2bar.block_id(c, m));
    uni.push_back(heads.modality[m].forward(tape, ops::gather_rows(means, rows)).value());
  }
  std::vector<std::vector<BranchPrediction>> out(C);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t m = 0; m < M; ++m) {
      if (batch[c].observed(m)) out[c].push_back(make(BranchKind::unimodal, m, positive_probability(uni[m], c)));
    }
    out[c].push_back(make(BranchKind::cross_modal, 0, positive_probability(f, c)));
    out[c].push_back(make(BranchKind::global, 0, positive_probability(g, c)));
  }
  return out;
}

BranchPrediction select_branch(const std::vector<BranchPrediction>& candidates) {
  if (candidates.empty()) throw std::invalid_argument("select_branch: no candidates");
  const BranchPrediction* best = &candidates.front();
  for (const auto& c : candidates) {
    if (c.entropy < best->entropy) best = &c;
  }
  for (const auto& c : candidates) {
    if (c.kind == BranchKind::global && c.entropy == best->entropy) return c;
  }
  return *best;
}

std::vector<double> predict(Tape& tape, const LayerOutputs& outputs, const EventBatch& batch, const Heads& heads,
                            InferenceMode mode) {
  const auto branches = branch_predictions(tape, outputs, batch, heads);
  std::vector<double> probs;
  probs.reserve(branches.size());
  for (const auto& cands : branches) {
    if (mode == InferenceMode::global) {
      probs.push_back(cands.back().probability);
    } else {
      probs.push_back(select_branch(cands).probability);
    }
  }
  return probs;
}

}  // namespace hp
