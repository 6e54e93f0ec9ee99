// Anchor-grid sampling: each (case, modality) sequence is compressed onto the
// fixed timestamps {0, dt, 2dt, ...} <= horizon of its modality. The anchor at
// t_a for modality m queries the whole block H_m^c with the learned vector q_m:
//   r_h = W_Q q_m - W_K h_j,  r_t = phi_t(t_a - t_j)
//   out_a = sum_j softmax_j(couple(r_h, r_t)) W_V h_j
// Blocks of unobserved modalities (mu = 0) are filled with q_m replicated at
// every anchor under the placeholder policy. The sample policy instead attends
// over whatever the block holds, which is how reconstruction features are
// downsampled.

#ifndef HEALTHPOINT_SAMPLING_HPP
#define HEALTHPOINT_SAMPLING_HPP

#include <string>
#include <vector>

#include "healthpoint/relations.hpp"

namespace hp {

struct AnchorGrid {
  std::vector<double> interval;  ///< Hours between anchors, per modality.
  double horizon = 48.0;

  std::size_t count(std::size_t m) const;
  /// k * interval[m] for k = 0 .. floor(horizon / interval[m]).
  std::vector<double> anchors(std::size_t m) const;

  bool operator==(const AnchorGrid&) const = default;
};

enum class MissingPolicy { placeholder, sample };

struct LrrslConfig {
  std::size_t width = 32;
  std::size_t heads = 8;
  std::size_t rank = 8;
  std::size_t modalities = 2;
  /// Modalities this instance emits blocks for, increasing.
  std::vector<std::uint32_t> handled;
};

class LrrslLayer {
 public:
  LrrslLayer() = default;
  LrrslLayer(ParameterStore& store, const std::string& name, const LrrslConfig& config, Rng& rng);

  /// A grid-aligned cloud holding blocks for the handled modalities only.
  PointCloud forward(Tape& tape, const PointCloud& in, const AnchorGrid& grid, MissingPolicy policy) const;

  const LrrslConfig& config() const { return config_; }
  const RelationParams& relations() const { return relations_; }
  const LowRankCoupling& coupling() const { return coupling_; }
  const Linear& value() const { return value_; }
  /// (handled, d); row k is q_m for m = handled[k].
  Parameter& anchor_queries() const { return *queries_; }

 private:
  LrrslConfig config_;
  RelationParams relations_;
  LowRankCoupling coupling_;
  Linear value_;
  Parameter* queries_ = nullptr;
};

/// True iff both clouds hold, for every case, blocks of modality m with identical
/// lengths and bit-identical timestamps.
bool grid_align_check(const PointCloud& a, const PointCloud& b, std::size_t m);

}  // namespace hp

#endif  // HEALTHPOINT_SAMPLING_HPP
