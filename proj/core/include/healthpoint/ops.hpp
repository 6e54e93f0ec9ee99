// Differentiable operations recorded on a Tape.
//
// Broadcasting rule for the binary elementwise ops (add, sub, mul): the two
// shapes must be equal, or one operand must be a single element (scalar
// broadcast), or one operand's shape must equal a trailing suffix of the other
// (trailing-axis expansion, e.g. (d) against (n, d)). Anything else raises
// ShapeError naming both shapes.
//
// Every reduction sums in a fixed index order, so results are bitwise
// reproducible. matmul computes each output row from its own input row only,
// which keeps row results independent of how many rows are batched together.

#ifndef HEALTHPOINT_OPS_HPP
#define HEALTHPOINT_OPS_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "healthpoint/autodiff.hpp"

namespace hp {

/// Compressed sparse rows: row i owns cols[offsets[i] .. offsets[i+1]).
struct Csr {
  std::vector<std::size_t> offsets{0};
  std::vector<std::uint32_t> cols;

  std::size_t rows() const { return offsets.size() - 1; }
  std::size_t nnz() const { return cols.size(); }
  std::span<const std::uint32_t> row(std::size_t i) const {
    return {cols.data() + offsets[i], offsets[i + 1] - offsets[i]};
  }
  void push_row(std::span<const std::uint32_t> members) {
    cols.insert(cols.end(), members.begin(), members.end());
    offsets.push_back(cols.size());
  }
  /// Row index of every stored entry.
  std::vector<std::uint32_t> row_of_entries() const;

  bool operator==(const Csr&) const = default;
};

namespace ops {

// Elementwise arithmetic with the broadcasting rule above.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var neg(Var a);

// Unary maps.
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
/// Tanh-approximated GELU (smooth everywhere).
Var gelu(Var a);

/// (n, k) x (k, m) -> (n, m).
Var matmul(Var a, Var b);

Var sum(Var a);
Var mean(Var a);
/// Reduction over one axis; the axis is removed from the shape.
Var sum(Var a, std::size_t axis);
Var mean(Var a, std::size_t axis);

Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);

/// Rows of a (n, ...) tensor picked by index; repeated indices are allowed.
Var gather_rows(Var a, std::span<const std::uint32_t> index);
/// out[index[r]] += src[r] over a zero tensor with `rows` rows.
Var scatter_add_rows(Var src, std::span<const std::uint32_t> index, std::size_t rows);
/// out[r] = take_first[r] ? a[r] : b[r], copied bitwise.
Var where_rows(std::span<const std::uint8_t> take_first, Var a, Var b);
/// Multiplies row r of a 2-D tensor by a constant weight.
Var scale_rows(Var a, std::span<const double> weights);

/// Numerically stabilised softmax along the last axis of `logits`.
/// Masked-out entries are exactly 0. A fully masked row raises std::domain_error.
Var softmax(Var logits, std::span<const std::uint8_t> mask);

/// Row-wise -log softmax(logits)[label]; returns shape (n).
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

/// Per-row normalisation with learned gain and bias over the last axis.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// Rows scaled to unit Euclidean norm, u / sqrt(|u|^2 + eps).
Var l2_normalize_rows(Var x, double eps = 1e-12);

// Segment (CSR) operations used by neighbourhood attention.

/// Softmax of (E, H) logits over each CSR row segment, independently per column.
Var segment_softmax(Var logits, const Csr& segments);
/// log sum exp of a length-E vector over each segment; returns (rows).
Var segment_logsumexp(Var values, const Csr& segments);
/// out[i, head chunk] = sum_{e in row i} alpha[e, head] * values[cols[e], head chunk].
/// alpha is (E, H); values is (n, d) with d divisible by H.
Var attend(Var alpha, Var values, const Csr& neighbours);
/// Mean of the member rows of each group; returns (groups, d).
Var segment_mean_rows(Var x, const Csr& groups);
/// out[e] = <a[row_a[e]], b[row_b[e]]>.
Var edge_dot(Var a, Var b, std::span<const std::uint32_t> row_a,
             std::span<const std::uint32_t> row_b);

/// Per-head projection: x (K, d) with coeff (H, G, d/H) -> (K, H, G),
/// out[k, h, g] = sum_e x[k, h*dh + e] * coeff[h, g, e].
Var head_project(Var x, Var coeff);

/// One signed lookup into a projected relation table.
struct RelationTerm {
  Var coupled;  ///< (K, H, R) projections <Q^(gamma), r> per table row.
  Var unary;    ///< (K, H, 1) projections <w, r> per table row.
  std::vector<std::uint32_t> index;  ///< Table row per edge.
  double sign = 1.0;
};

/// A relation dimension whose per-edge projection is the signed sum of its terms.
struct RelationDim {
  std::vector<RelationTerm> terms;
};

/// Attention logits over E edges and H heads:
///   e = sum_gamma prod_dims s_dim[gamma] + sum_dims u_dim + bias[head].
/// bias has shape (H). Returns (E, H).
Var relational_logits(std::span<const RelationDim> dims, Var bias, std::size_t edges,
                      std::size_t rank);

}  // namespace ops

inline Var operator+(Var a, Var b) { return ops::add(a, b); }
inline Var operator-(Var a, Var b) { return ops::sub(a, b); }
inline Var operator*(Var a, Var b) { return ops::mul(a, b); }
inline Var operator*(double s, Var a) { return ops::scale(a, s); }
inline Var operator-(Var a) { return ops::neg(a); }

}  // namespace hp

#endif  // HEALTHPOINT_OPS_HPP
