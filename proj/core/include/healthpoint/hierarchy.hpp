// The five-level pipeline
//   encode -> LRRL1 -> LRRSL1 -> LRRL2 -> (per-modality projection) -> LRRL3 -> LRRSL3
//          -> LRRL4 -> recovery update -> LRRL5
// Levels 1-2 and the first sampling layer run once per modality with their own
// parameters; everything from level 3 on is shared. Layers 3 and 4 carry
// reconstruction heads whose outputs, sampled to the level-4 grid and summed,
// replace the level-4 tokens of unobserved modalities before level 5.
//
// The forward pass has no stochastic parts, so training and evaluation run the
// same computation.

#ifndef HEALTHPOINT_HIERARCHY_HPP
#define HEALTHPOINT_HIERARCHY_HPP

#include <memory>
#include <vector>

#include "healthpoint/lrrl.hpp"
#include "healthpoint/neighborhoods.hpp"
#include "healthpoint/sampling.hpp"

namespace hp {

struct ModelConfig {
  std::size_t modalities = 2;
  std::vector<std::size_t> feature_dims{8, 8};
  std::size_t width = 32;
  std::size_t heads = 8;
  std::size_t rank = 8;
  std::size_t ffn_multiplier = 4;
  double delta = 2.0;
  std::size_t k_max = 6;
  AnchorGrid grid1{{1.0, 4.0}, 48.0};
  AnchorGrid grid3{{4.0, 12.0}, 48.0};
  bool pre_norm = true;
  /// REC reads the attention aggregate as a constant, so the reconstruction loss trains only the
  /// reconstruction branch and the level-3 sampler it reuses. With gradients into the shared attention,
  /// the detached target inflates along with the trunk and training diverges.
  bool isolate_reconstruction = true;
  std::uint64_t init_seed = 0;

  bool operator==(const ModelConfig&) const = default;
};

/// Classifier heads: f_phi on the concatenated last-anchor features, f_m per modality.
struct Heads {
  Linear fusion;
  std::vector<Linear> modality;
};

struct LayerOutputs {
  PointCloud encoded;
  PointCloud h2bar;  ///< Level-2 output before projection.
  PointCloud h3bar;
  PointCloud h4;
  PointCloud h4bar;  ///< Level-4 output before the recovery update.
  Var h3r;           ///< REC at level 3, (|h3bar|, d).
  PointCloud h3r_sampled;
  Var h4r;
  Var hhat;  ///< h3r_sampled + h4r.
  PointCloud h4bar_recovered;
  PointCloud h5bar;
};

class HierarchyModel {
 public:
  explicit HierarchyModel(const ModelConfig& config);
  HierarchyModel(const HierarchyModel&) = delete;
  HierarchyModel& operator=(const HierarchyModel&) = delete;

  LayerOutputs forward(Tape& tape, const EventBatch& batch) const;

  /// Reconstruction: the level-3 REC features sampled onto the level-4 grid plus the level-4 REC features.
  Var reconstruct(Tape& tape, const PointCloud& h3bar, Var h3r, Var h4r, PointCloud* h3r_sampled = nullptr) const;

  const ModelConfig& config() const { return config_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  const Heads& heads() const { return heads_; }

  const ModalityEncoder& encoder() const { return encoder_; }
  const LrrlLayer& local(std::size_t m) const { return local_[m]; }
  const LrrslLayer& first_sampler(std::size_t m) const { return sampler1_[m]; }
  const LrrlLayer& intra(std::size_t m) const { return intra_[m]; }
  const Linear& projection(std::size_t m) const { return projection_[m]; }
  const LrrlLayer& cross_modality() const { return cross_modality_; }
  const LrrslLayer& second_sampler() const { return sampler3_; }
  const LrrlLayer& cross_sample() const { return cross_sample_; }
  const LrrlLayer& fusion() const { return fusion_; }

  NeighborhoodOptions neighborhood_options() const { return {config_.delta, config_.k_max}; }

 private:
  ModelConfig config_;
  ParameterStore store_;
  ModalityEncoder encoder_;
  std::vector<LrrlLayer> local_;
  std::vector<LrrslLayer> sampler1_;
  std::vector<LrrlLayer> intra_;
  std::vector<Linear> projection_;
  LrrlLayer cross_modality_;
  LrrslLayer sampler3_;
  LrrlLayer cross_sample_;
  LrrlLayer fusion_;
  Heads heads_;
};

}  // namespace hp

#endif  // HEALTHPOINT_HIERARCHY_HPP
