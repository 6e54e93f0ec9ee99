// Test fixtures and plain-double reference implementations.
//
// The references below recompute layer outputs with ordinary loops over
// std::vector<double>, reading parameter values directly. They share no code
// with the tape operations they are compared against.

#ifndef HEALTHPOINT_TESTS_SUPPORT_HPP
#define HEALTHPOINT_TESTS_SUPPORT_HPP

#include <cstdint>
#include <vector>

#include "healthpoint/config.hpp"
#include "healthpoint/neighborhoods.hpp"
#include "healthpoint/trainer.hpp"

namespace hp::test {

using Row = std::vector<double>;
using Rows = std::vector<Row>;

// ---- fixtures --------------------------------------------------------------

/// Width 8, 2 heads, rank 2, short 12 h horizon: small enough for finite differences.
ModelConfig tiny_model(std::uint64_t seed, std::size_t rank = 2);
/// Synthetic cases matching tiny_model(); labels all observed.
EventBatch tiny_batch(std::uint64_t seed, std::size_t cases, double modality_missing,
                      TaskKind task = TaskKind::separable);

/// Random events on a half-hour lattice so equal timestamps and distance ties occur.
EventBatch random_batch(Rng& rng, std::size_t max_cases, std::size_t max_events, std::size_t modalities = 2);

/// Cloud with the batch's coordinates and the given token rows.
PointCloud cloud_with_tokens(Tape& tape, const EventBatch& batch, const Rows& tokens);
/// Cloud with the batch's coordinates and N(0, 1) tokens of the given width.
PointCloud random_cloud(Tape& tape, const EventBatch& batch, std::size_t width, Rng& rng);

Rows rows_of(const Tensor& t);
Tensor tensor_of(const Rows& rows);
Row random_row(Rng& rng, std::size_t n, double stddev = 1.0);

// ---- references ------------------------------------------------------------

/// Members of N(i) by scanning every token against the level's predicate.
std::vector<std::uint32_t> brute_neighbours(const PointCloud& cloud, int level, std::size_t i,
                                            const NeighborhoodOptions& options);

double dot(const Row& a, const Row& b);
/// x W (+ b) with W stored (in, out).
Row linear_ref(const Linear& layer, const Row& x);
double gelu_ref(double x);
Row mlp_ref(const Mlp& mlp, const Row& x);
Row layer_norm_ref(const LayerNorm& norm, const Row& x);

/// One logit per head: sum_g prod_dims <Q, r> + sum_dims <w, r> + b, each r split into head chunks.
Row logits_ref(const LowRankCoupling& coupling, const std::vector<std::pair<Dim, Row>>& relations);

/// Dense evaluation of LrrlLayer::forward. `case_rows` holds r_c per ordered case pair
/// (row c_i * cases + c_j) and is only read when the layer uses the case dimension.
/// Returns the layer output and, through `alpha_out`, the attention weights per edge and head.
Rows lrrl_ref(const LrrlLayer& layer, const PointCloud& cloud, const Rows& tokens, const Csr& neighbours,
              const Rows& case_rows = {}, Rows* alpha_out = nullptr);

/// Dense evaluation of one sampled anchor: softmax over every token of the block.
Row lrrsl_anchor_ref(const LrrslLayer& layer, std::size_t handled_index, double anchor_time, const Rows& block_tokens,
                     const std::vector<double>& block_times);

/// BiGRU readout for one difference sequence.
Row bigru_ref(const BiGru& gru, const Rows& steps);

// ---- oracles for metrics ---------------------------------------------------

/// Fraction of (positive, negative) pairs ranked correctly, ties counted as 1/2.
double auroc_pairs(const std::vector<double>& scores, const std::vector<int>& labels);
/// Average precision from the list of distinct thresholds, highest first.
double auprc_thresholds(const std::vector<double>& scores, const std::vector<int>& labels);

}  // namespace hp::test

#endif  // HEALTHPOINT_TESTS_SUPPORT_HPP
