// Self-supervised terms.
//
// Alignment (on level-2 tokens of observed, non-excluded modalities):
//   L_a = mean over tokens i with P+(i) nonempty of
//         -log( sum_{P+} e^{cos(h_i,h_j)/tau} / sum_{P+ u P-} e^{cos(h_i,h_j)/tau} )
//   P+(i): same case, other modality, equal timestamp
//   P-(i): other case, other modality, equal timestamp
//
// Reconstruction:
//   L_r = sum over observed (case, modality) blocks of ||Hhat_m^c - H4bar_m^c||^2,
//   divided by (observed tokens x width), i.e. a per-coordinate mean, unless raw
//   sums are requested.
//   The level-4 target is a constant unless the symmetric variant is requested.

#ifndef HEALTHPOINT_SELFSUP_HPP
#define HEALTHPOINT_SELFSUP_HPP

#include <vector>

#include "healthpoint/pointcloud.hpp"

namespace hp {

struct FgaConfig {
  double temperature = 0.1;
  /// Modalities left out of alignment.
  std::vector<std::uint32_t> excluded;

  bool operator==(const FgaConfig&) const = default;
};

/// Positive and negative partners per anchor token, as CSR rows over the anchors.
struct FgaPairs {
  std::vector<std::uint32_t> anchors;  ///< Tokens with at least one positive.
  Csr positives;
  Csr negatives;
};

FgaPairs fga_pairs(const PointCloud& h2, const FgaConfig& config);

/// Throws std::invalid_argument when temperature <= 0. Zero when no token has a positive.
Var fga_loss(Tape& tape, const PointCloud& h2, const FgaConfig& config);

struct FgrOptions {
  bool detach_target = true;
  bool normalize = true;
};

/// hhat is row-aligned with h4bar.
Var fgr_loss(Tape& tape, Var hhat, const PointCloud& h4bar, const FgrOptions& options = {});

/// Tokens of observed blocks copied from h4bar, tokens of missing blocks copied from hhat.
Var recovery_update(const PointCloud& h4bar, Var hhat);

}  // namespace hp

#endif  // HEALTHPOINT_SELFSUP_HPP
