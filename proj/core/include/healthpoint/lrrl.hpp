// Low-rank relational attention block.
//
// With x = LN1(h) (or x = h when pre-normalisation is off):
//   alpha_ij  = softmax over j in N(i) of couple(r_ij)
//   a_i       = sum_j alpha_ij W_V x_j
//   z_i       = h_i + a_i
//   out_i     = z_i + FFN(LN2(z_i))
// An optional reconstruction head computes REC(a_i) from the aggregate alone; it
// never feeds back into out.

#ifndef HEALTHPOINT_LRRL_HPP
#define HEALTHPOINT_LRRL_HPP

#include <optional>
#include <string>

#include "healthpoint/relations.hpp"

namespace hp {

struct LrrlConfig {
  DimSet dims;
  std::size_t width = 32;
  std::size_t heads = 8;
  std::size_t rank = 8;
  std::size_t modalities = 2;
  std::size_t ffn_hidden = 128;
  bool pre_norm = true;
  bool reconstruction = false;
  bool isolate_reconstruction = true;  ///< REC sees the aggregate without a gradient path back.
};

class LrrlLayer {
 public:
  struct Output {
    PointCloud cloud;    ///< Updated tokens, coordinates unchanged.
    Var aggregate;       ///< sum_j alpha_ij W_V x_j, (N, d).
    Var reconstruction;  ///< REC(aggregate) when configured.
    Var alpha;           ///< (edges, heads) attention weights.
  };

  LrrlLayer() = default;
  LrrlLayer(ParameterStore& store, const std::string& name, const LrrlConfig& config, Rng& rng);

  /// Every row of `neighbours` must be nonempty. Level-4 style layers (case dimension
  /// active) need grid-aligned blocks for the case relation.
  Output forward(Tape& tape, const PointCloud& in, const Csr& neighbours) const;

  const LrrlConfig& config() const { return config_; }
  const RelationParams& relations() const { return relations_; }
  const LowRankCoupling& coupling() const { return coupling_; }
  const Linear& value() const { return value_; }
  const Mlp& ffn() const { return ffn_; }
  const std::optional<Mlp>& rec() const { return rec_; }
  const LayerNorm& norm1() const { return norm1_; }
  const LayerNorm& norm2() const { return norm2_; }

 private:
  LrrlConfig config_;
  RelationParams relations_;
  LowRankCoupling coupling_;
  Linear value_;
  Mlp ffn_;
  LayerNorm norm1_, norm2_;
  std::optional<Mlp> rec_;
};

/// Edge lookups for attention within one cloud; case-table rows are c_i * cases + c_j.
EdgeIndex self_edges(const PointCloud& cloud, const Csr& neighbours);

/// r_c for every ordered case pair of the cloud, row c_i * cases + c_j.
Var case_table(Tape& tape, const RelationParams& params, const PointCloud& cloud);

}  // namespace hp

#endif  // HEALTHPOINT_LRRL_HPP
