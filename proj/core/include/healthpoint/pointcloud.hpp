// Clinical points: one token per observation, with (time, modality, case) coordinates.
//
// Tokens are stored grouped into (case, modality) blocks in modality-major
// order, block (c, m) at position m * cases + c, each block in time order. A
// modality's tokens are therefore contiguous, which lets the per-modality
// levels cut the cloud into parts and glue them back without reordering.

#ifndef HEALTHPOINT_POINTCLOUD_HPP
#define HEALTHPOINT_POINTCLOUD_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "healthpoint/events.hpp"
#include "healthpoint/layers.hpp"

namespace hp {

struct PointCloud {
  Var tokens;  ///< (N, d)
  std::vector<double> time;
  std::vector<std::uint32_t> modality;
  std::vector<std::uint32_t> case_index;  ///< Position of the token's case within the batch.
  std::size_t cases = 0;
  std::size_t modalities = 0;
  std::vector<std::uint8_t> availability;  ///< mu, (cases x modalities) row-major.
  std::vector<std::size_t> offsets;        ///< Block b owns rows [offsets[b], offsets[b+1]).

  std::size_t size() const { return time.size(); }
  std::size_t width() const { return tokens.value().cols(); }

  std::size_t block_id(std::size_t c, std::size_t m) const { return m * cases + c; }
  std::pair<std::size_t, std::size_t> block(std::size_t c, std::size_t m) const {
    const auto b = block_id(c, m);
    return {offsets[b], offsets[b + 1]};
  }
  std::size_t block_size(std::size_t c, std::size_t m) const {
    const auto [b, e] = block(c, m);
    return e - b;
  }
  bool observed(std::size_t c, std::size_t m) const { return availability[c * modalities + m] != 0; }

  /// H_m^c as a time-ordered (k, d) view; empty when the block holds no tokens.
  Var slice(std::size_t c, std::size_t m) const;

  /// Same coordinates, different content.
  PointCloud with_tokens(Var new_tokens) const;
  /// The tokens of one modality; every other block is empty.
  PointCloud part(std::size_t m) const;
  /// Inverse of part(): joins clouds whose nonempty blocks belong to disjoint modalities,
  /// given in increasing modality order.
  static PointCloud merge(const std::vector<PointCloud>& parts);

  /// Rows of every block as CSR segments, in block order.
  Csr blocks() const;
  /// Per-token availability of the token's block.
  std::vector<std::uint8_t> token_mask() const;

  /// Throws std::logic_error when the coordinate arrays or block index are inconsistent.
  void validate() const;
};

/// Per-modality two-layer perceptrons from raw content to the model width.
struct ModalityEncoder {
  std::vector<Mlp> mlps;

  ModalityEncoder() = default;
  ModalityEncoder(ParameterStore& store, const std::string& name, const std::vector<std::size_t>& feature_dims,
                  std::size_t width, Activation act, Rng& rng);

  std::size_t modalities() const { return mlps.size(); }
};

/// One token per event, coordinates carried over unchanged.
PointCloud encode(Tape& tape, const EventBatch& batch, const ModalityEncoder& encoder);

}  // namespace hp

#endif  // HEALTHPOINT_POINTCLOUD_HPP
