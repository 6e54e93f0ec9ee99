// Supervised objectives, the weighted total, and branch selection at inference.
//
//   L_g = CE(f_phi(u5_c), y_c)          over labelled cases
//   L_f = CE(f_phi(u3_c), y_c)          over labelled cases with every modality observed
//   L_s = CE(f_m(mean H2bar_m^c), y_c)  over labelled cases and their observed modalities
// u^l_c concatenates, in modality order, the last token of each (c, m) block of level l.
// Each family is averaged over its contributing terms (0 without terms) unless raw
// sums are requested.
//   L_total = L_g + L_f + L_s + lambda_a L_a + lambda_r L_r

#ifndef HEALTHPOINT_OBJECTIVES_HPP
#define HEALTHPOINT_OBJECTIVES_HPP

#include <string>
#include <vector>

#include "healthpoint/hierarchy.hpp"
#include "healthpoint/selfsup.hpp"

namespace hp {

struct LossConfig {
  double lambda_a = 0.002;
  double lambda_r = 10.0;
  bool normalize = true;  ///< false: raw sums for the supervised and reconstruction terms.
  bool detach_target = true;
  FgaConfig fga;

  bool operator==(const LossConfig&) const = default;
};

/// (cases, M * d) fused representation of a grid-aligned cloud.
Var fuse_cases(const PointCloud& cloud);

struct SupervisedLosses {
  Var global;    ///< L_g
  Var fusion;    ///< L_f
  Var unimodal;  ///< L_s
};

SupervisedLosses supervised_losses(Tape& tape, const LayerOutputs& outputs, const EventBatch& batch,
                                   const Heads& heads, bool normalize = true);

struct LossBreakdown {
  Var global, fusion, unimodal, align, recon, total;
};

/// Exact weighted sum (L_g + L_f + L_s) + lambda_a L_a + lambda_r L_r.
Var total_loss(Var global, Var fusion, Var unimodal, Var align, Var recon, const LossConfig& config);

/// All five terms and the total for one forward pass.
LossBreakdown compute_losses(Tape& tape, const LayerOutputs& outputs, const EventBatch& batch, const Heads& heads,
                             const LossConfig& config);

enum class BranchKind { unimodal, cross_modal, global };
enum class InferenceMode { entropy, global };

struct BranchPrediction {
  BranchKind kind = BranchKind::global;
  std::size_t modality = 0;  ///< For unimodal branches.
  double probability = 0.5;  ///< P(y = 1).
  double entropy = 0.0;
};

std::string branch_name(const BranchPrediction& p);

/// Candidate branches of every case: f_m for observed m, f_phi(u3), f_phi(u5), in that order.
std::vector<std::vector<BranchPrediction>> branch_predictions(Tape& tape, const LayerOutputs& outputs,
                                                              const EventBatch& batch, const Heads& heads);

/// Lowest-entropy candidate; ties go to the global branch, then to the earliest candidate.
BranchPrediction select_branch(const std::vector<BranchPrediction>& candidates);

double binary_entropy(double p);

/// Per-case P(y = 1) under the chosen inference mode.
std::vector<double> predict(Tape& tape, const LayerOutputs& outputs, const EventBatch& batch, const Heads& heads,
                            InferenceMode mode);

}  // namespace hp

#endif  // HEALTHPOINT_OBJECTIVES_HPP
