// Low-rank coupling of relation features into attention logits.
//
// For a pair (i, j) with relation vectors r_* on the active dimensions D,
//   e_ij = sum_gamma prod_{* in D} <Q_*^(gamma), r_*> + sum_{* in D} <w_*, r_*> + b.
// With several heads every r_* is cut into contiguous chunks of width d/heads
// and each head owns its own Q, w and b.
//
// full_tensor_oracle() evaluates the same logit the slow way: it builds the
// order-|D| tensor W = sum_gamma (outer product of the Q_*^(gamma)) and
// contracts it with the outer product of the r_*.

#ifndef HEALTHPOINT_COUPLING_HPP
#define HEALTHPOINT_COUPLING_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "healthpoint/autodiff.hpp"
#include "healthpoint/rng.hpp"

namespace hp {

enum class Dim : std::uint8_t { content = 0, time = 1, modality = 2, case_ = 3 };
inline constexpr std::size_t kDimCount = 4;

/// Subset of {content, time, modality, case}.
class DimSet {
 public:
  constexpr DimSet() = default;
  constexpr DimSet(std::initializer_list<Dim> dims) {
    for (Dim d : dims) bits_ |= bit(d);
  }
  static constexpr DimSet from_bits(std::uint8_t bits) {
    DimSet s;
    s.bits_ = bits & 0xF;
    return s;
  }
  /// Parses letters from "htmc" (content, time, modality, case).
  static DimSet parse(const std::string& letters);

  constexpr bool has(Dim d) const { return (bits_ & bit(d)) != 0; }
  constexpr std::uint8_t bits() const { return bits_; }
  std::size_t size() const;
  bool empty() const { return bits_ == 0; }
  /// Members in canonical order h, t, m, c.
  std::vector<Dim> list() const;
  std::string letters() const;

  constexpr bool operator==(const DimSet&) const = default;

 private:
  static constexpr std::uint8_t bit(Dim d) { return static_cast<std::uint8_t>(1u << static_cast<unsigned>(d)); }
  std::uint8_t bits_ = 0;
};

std::string dim_name(Dim d);

/// Relation vectors of one token pair; populated exactly on the owning layer's active dimensions.
struct RelationFeatures {
  std::array<std::optional<std::vector<double>>, kDimCount> r;

  const std::optional<std::vector<double>>& operator[](Dim d) const { return r[static_cast<std::size_t>(d)]; }
  std::optional<std::vector<double>>& operator[](Dim d) { return r[static_cast<std::size_t>(d)]; }
  DimSet populated() const;
};

class LowRankCoupling {
 public:
  LowRankCoupling() = default;
  /// Q ~ N(0, 1/d), w = 0, b = 0. Parameters are named "<name>.Q.<dim>", "<name>.w.<dim>", "<name>.b".
  LowRankCoupling(ParameterStore& store, const std::string& name, DimSet dims, std::size_t width, std::size_t heads,
                  std::size_t rank, Rng& rng);

  DimSet dims() const { return dims_; }
  std::size_t width() const { return width_; }
  std::size_t heads() const { return heads_; }
  std::size_t rank() const { return rank_; }
  std::size_t head_width() const { return width_ / heads_; }

  /// (heads, rank, head_width); row [h][gamma] is Q_*^(gamma) for head h.
  Parameter& q(Dim d) const;
  /// (heads, 1, head_width).
  Parameter& w(Dim d) const;
  /// (heads).
  Parameter& bias() const { return *bias_; }

  std::vector<Parameter*> parameters() const;

 private:
  DimSet dims_;
  std::size_t width_ = 0, heads_ = 1, rank_ = 0;
  std::array<Parameter*, kDimCount> q_{};
  std::array<Parameter*, kDimCount> w_{};
  Parameter* bias_ = nullptr;
};

/// Floating-point operation tallies (one multiply or one add = 1).
struct OpCount {
  std::uint64_t coupled = 0;      ///< Rank-coupled term (or oracle contraction incl. the outer product of r).
  std::uint64_t unary = 0;        ///< Unary terms and bias.
  std::uint64_t materialize = 0;  ///< Oracle only: building W from the Q vectors.
};

class CouplingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One logit per head. Throws CouplingError when rel is not populated exactly on the coupling's dims.
std::vector<double> couple(const RelationFeatures& rel, const LowRankCoupling& coupling, OpCount* ops = nullptr);

inline constexpr std::size_t kOracleMaxHeadWidth = 6;
/// Reference evaluation through the explicit interaction tensor; |D| <= 4 and head width <= 6.
std::vector<double> full_tensor_oracle(const RelationFeatures& rel, const LowRankCoupling& coupling,
                                       OpCount* ops = nullptr);

struct CouplingBench {
  std::size_t width = 0, rank = 0, dims = 0, pairs = 0;
  double coupled_ops_per_pair = 0.0;
  double unary_ops_per_pair = 0.0;
  double oracle_ops_per_pair = 0.0;
  double oracle_materialize_ops = 0.0;  ///< Per pair, building W each time.
  double couple_seconds = 0.0;
  double oracle_seconds = 0.0;
  double max_abs_diff = 0.0;
};

/// Times couple() against the oracle on random single-head couplings using the first `dims`
/// dimensions of h, t, m, c.
CouplingBench benchmark_coupling(std::size_t width, std::size_t rank, std::size_t dims, std::size_t pairs,
                                 std::uint64_t seed = 0);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};
/// Ordinary least squares y ~ slope * x + intercept.
LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace hp

#endif  // HEALTHPOINT_COUPLING_HPP
