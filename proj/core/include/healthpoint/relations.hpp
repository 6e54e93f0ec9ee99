// Pairwise relation features between clinical points.
//
//   content   r_h = W_Q h_i - W_K h_j
//   time      r_t = phi_t(t_i - t_j), phi_t a two-layer perceptron on the signed interval in hours
//   modality  r_m = E_m[m_i, m_j], a learned (M x M x d) table
//   case      r_c = mean over co-observed modalities m of BiGRU(H_m^{c_i} - H_m^{c_j}); zero when none
//
// The attention layers never materialise r_* per pair. relation_logits() projects
// each relation table onto the coupling vectors once per distinct row (token,
// interval, modality pair or case pair) and combines the projections per edge.

#ifndef HEALTHPOINT_RELATIONS_HPP
#define HEALTHPOINT_RELATIONS_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "healthpoint/coupling.hpp"
#include "healthpoint/layers.hpp"
#include "healthpoint/pointcloud.hpp"

namespace hp {

struct RelationParams {
  DimSet dims;
  std::size_t width = 0;
  std::size_t modalities = 0;
  Linear query;  ///< W_Q, no bias.
  Linear key;    ///< W_K, no bias.
  Mlp time;      ///< phi_t: 1 -> width -> width.
  Parameter* affinity = nullptr;  ///< E_m stored as (M * M, width), row m_i * M + m_j.
  BiGru case_gru;                 ///< Difference sequences -> width.

  RelationParams() = default;
  /// Creates only the parameters the active dimensions need.
  RelationParams(ParameterStore& store, const std::string& name, DimSet dims, std::size_t width,
                 std::size_t modalities, Rng& rng);
};

/// W_Q h_i - W_K h_j for row-aligned (n, d) inputs.
Var content_relation(Tape& tape, const RelationParams& params, Var hi, Var hj);
/// phi_t(dt) for each interval; returns (n, d).
Var time_relation(Tape& tape, const RelationParams& params, std::span<const double> dt);
/// E_m rows for (m_i, m_j) pairs; throws std::out_of_range for ids >= M.
Var modality_relation(Tape& tape, const RelationParams& params,
                      std::span<const std::pair<std::uint32_t, std::uint32_t>> pairs);

struct CasePair {
  std::uint32_t first = 0;
  std::uint32_t second = 0;
};
/// r_c for each ordered case pair, from the cloud's per-modality blocks. Blocks of a
/// co-observed modality must have equal lengths (grid-aligned); otherwise std::invalid_argument.
/// Pairs are batched per modality through one BiGRU pass; results do not depend on
/// which other pairs share the call.
Var case_relation(Tape& tape, const RelationParams& params, const PointCloud& cloud,
                  std::span<const CasePair> pairs);

/// Per-edge lookups for relation_logits().
struct EdgeIndex {
  std::vector<std::uint32_t> query;          ///< Row of the query content table.
  std::vector<std::uint32_t> key;            ///< Row of the key content table.
  std::vector<double> interval;              ///< t_i - t_j.
  std::vector<std::uint32_t> modality_pair;  ///< m_i * M + m_j.
  std::vector<std::uint32_t> case_pair;      ///< Row of the case table.

  std::size_t size() const { return key.size(); }
};

/// (E, heads) attention logits. query_x / key_x feed the content relation,
/// case_table (rows indexed by EdgeIndex::case_pair) feeds the case relation.
/// Only the coupling's active dimensions are evaluated.
Var relation_logits(Tape& tape, const RelationParams& params, const LowRankCoupling& coupling, Var query_x,
                    Var key_x, const EdgeIndex& edges, Var case_table = {});

}  // namespace hp

#endif  // HEALTHPOINT_RELATIONS_HPP
